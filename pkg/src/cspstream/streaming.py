"""One-pass sketch, the streaming reduction built from it, and the coupled run.

Stream elements are ``(i, Constraint)`` pairs: ``i`` is the constraint's
identity, so draws keyed by ``(i, l, t)`` do not depend on arrival order.
Only the constraint-copy reservoir is keyed by arrival index.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import islice
from typing import Callable, Iterable

import numpy as np

from .core import CSPError, Constraint, Instance, PredicateRegistry, degrees
from .hashing import KWiseHash
from .local import CopyInstance, a_loc_default
from .reduction import (
    CoupledGtildePolicy,
    EstimatorConfig,
    Params,
    aggregate,
    make_hash,
    offline_estimate,
    pick_index,
    retention_ratio,
    round_half_up,
)
from .reservoir import Reservoir
from .tape import RandomTape

CHUNK = 4096
SPACE_CAP_ENV = "CSPSTREAM_SPACE_CAP"


class StreamTerminated(CSPError):
    """The streaming reduction hit a retention probability above 1."""

    def __init__(self, variable, j, dtilde):
        super().__init__(f"retention probability above 1 for variable {variable} (j={j}, dtilde={dtilde})")
        self.variable, self.j, self.dtilde = variable, j, dtilde


class SpaceCapExceeded(CSPError):
    def __init__(self, used, cap):
        super().__init__(f"sketch holds {used} entries, cap is {cap}")
        self.used, self.cap = used, cap


def space_cap(params: Params) -> int:
    env = os.environ.get(SPACE_CAP_ENV)
    return int(env) if env else params.space_cap


def instance_stream(inst: Instance, order=None):
    """Yield ``(i, constraint)`` in ``order`` (default: index order)."""
    for i in range(inst.m) if order is None else order:
        yield int(i), inst.constraints[i]


@dataclass
class Sketch:
    n: int
    B: int
    k: int
    S: set = field(default_factory=set)
    degs: dict = field(default_factory=dict)  # v -> count per copy-position
    F: dict = field(default_factory=dict)  # (i, l) -> (pred id, vars)
    G: dict = field(default_factory=dict)  # (i, l, t) -> v
    Gt: dict = field(default_factory=dict)  # (i, l, t) -> v
    reservoir: Reservoir = None
    count: int = 0
    peak: int = 0

    def size(self) -> int:
        return len(self.S) + len(self.degs) + len(self.F) + len(self.G) + len(self.Gt) + len(self.reservoir)

    def components(self) -> dict:
        """The order-invariant parts, as comparable sets."""
        return {
            "S": frozenset(self.S),
            "degs": frozenset(self.degs.items()),
            "F": frozenset(self.F.items()),
            "G": frozenset(self.G.items()),
            "Gt": frozenset(self.Gt.items()),
        }

    def cset(self) -> list:
        return sorted((int(c) // self.B, int(c) % self.B) for c in self.reservoir.slots)


class _Sketcher:
    """Incremental sketch state; ``feed`` takes one chunk of stream elements."""

    def __init__(self, n, params: Params, tape: RandomTape, H: KWiseHash, cap: int | None):
        self.params, self.tape, self.H, self.cap = params, tape, H, cap
        self.sk = Sketch(n, params.B, params.k, reservoir=Reservoir(params.s))
        self.alive = True

    def feed(self, ids, V, pids):
        sk, p, tape = self.sk, self.params, self.tape
        B, k = p.B, V.shape[1]
        if k != p.k:
            raise CSPError(f"constraint arity {k} differs from configured k={p.k}")
        in_s = np.asarray(self.H.sampled(V), dtype=bool).reshape(V.shape)
        if in_s.any():
            vs, cnt = np.unique(V[in_s], return_counts=True)
            for v, c in zip(vs.tolist(), cnt.tolist()):
                sk.S.add(v)
                sk.degs[v] = sk.degs.get(v, 0) + B * c
        i3 = ids[:, None, None]
        l3 = np.arange(B)[None, :, None]
        t3 = np.arange(k)[None, None, :]
        in_g = tape.uniform("G", i3, l3, t3) < p.g
        in_gt = tape.uniform("G~", i3, l3, t3) < p.p
        parents = np.broadcast_to(V[:, None, :], in_g.shape)
        for table, mask in ((sk.G, in_g), (sk.Gt, in_gt)):
            a, l, t = np.nonzero(mask)
            for key, v in zip(zip(ids[a].tolist(), l.tolist(), t.tolist()), parents[a, l, t].tolist()):
                table[key] = v
        keep = (in_s[:, None, :] | in_g).any(axis=2)
        for a, l in zip(*np.nonzero(keep)):
            sk.F[(int(ids[a]), int(l))] = (int(pids[a]), tuple(V[a].tolist()))
        sk.reservoir.extend((ids[:, None] * B + np.arange(B)).ravel().tolist(), tape)
        sk.count += len(ids)
        sk.peak = max(sk.peak, sk.size())
        if self.cap is not None and sk.peak > self.cap:
            self.alive = False
            raise SpaceCapExceeded(sk.peak, self.cap)


def _chunks(stream: Iterable, size: int):
    it = iter(stream)
    while True:
        block = list(islice(it, size))
        if not block:
            return
        ids = np.array([i for i, _ in block], dtype=np.int64)
        V = np.array([c.vars for _, c in block], dtype=np.int64)
        if V.ndim != 2:
            raise CSPError("mixed arities in stream; pad_arity first")
        pids = np.array([c.pred for _, c in block], dtype=np.int64)
        yield ids, V, pids


def sketch_stream(stream, n, params: Params, tape: RandomTape, H: KWiseHash | None = None, *, cap="default", chunk=CHUNK) -> Sketch:
    """Single pass over ``stream``; raises :class:`SpaceCapExceeded` past the cap."""
    H = H or make_hash(params, tape)
    cap = space_cap(params) if cap == "default" else cap
    sketcher = _Sketcher(n, params, tape, H, cap)
    for ids, V, pids in _chunks(stream, chunk):
        sketcher.feed(ids, V, pids)
    return sketcher.sk


@dataclass
class StreamReduction:
    sample: CopyInstance
    high: dict  # high v -> (dtilde, sampled copy indices)
    low: dict  # low v in S -> number of copies
    gdeg: dict


def streaming_reduction(sk: Sketch, params: Params, tape: RandomTape, registry: PredicateRegistry, sigma: int) -> StreamReduction:
    """Turn the sketch into the sampled sub-instance ``I'`` and its degree map."""
    B = params.B
    gdeg = {}
    for v in sk.Gt.values():
        gdeg[v] = gdeg.get(v, 0) + 1
    high = {}
    for v in sorted(gdeg):
        if gdeg[v] <= params.nq:
            continue
        dt = max(1, round_half_up(Fraction(gdeg[v] * params.nc, B)))
        idx = np.arange(1, dt + 1)
        chosen = idx[np.atleast_1d(tape.uniform("copy-sample", v, idx)) < params.p]
        if retention_ratio(len(chosen), dt, params.g) > 1:
            raise StreamTerminated(v, len(chosen), dt)
        high[v] = (dt, chosen)
    low = {v: sk.degs[v] // B for v in sorted(sk.S) if v not in high}

    cids = sorted(sk.F)
    I = np.array([c[0] for c in cids], dtype=np.int64)
    L = np.array([c[1] for c in cids], dtype=np.int64)
    k = sk.k
    V = np.array([sk.F[c][1] for c in cids], dtype=np.int64).reshape(len(cids), k)
    T = np.arange(k)
    u_a = tape.uniform("copy-assign", I[:, None], L[:, None], T[None, :])
    u_r = tape.uniform("resample", I[:, None], L[:, None], T[None, :])

    size = max(sk.n, int(V.max()) + 1 if V.size else 0)
    is_high = np.zeros(size, dtype=bool)
    hi_dt = np.ones(size, dtype=np.int64)
    hi_j = np.zeros(size, dtype=np.int64)
    hi_off = np.zeros(size, dtype=np.int64)
    low_d = np.zeros(size, dtype=np.int64)
    chosen_all, off = [], 0
    for v, (dt, chosen) in high.items():
        is_high[v], hi_dt[v], hi_j[v], hi_off[v] = True, dt, len(chosen), off
        chosen_all.append(chosen)
        off += len(chosen)
    chosen_all = np.concatenate(chosen_all) if chosen_all else np.zeros(0, dtype=np.int64)
    for v, d in low.items():
        low_d[v] = d

    codes = ((I * B + L)[:, None] * k + T[None, :])
    g_codes = np.array(sorted((i * B + l) * k + t for i, l, t in sk.G), dtype=np.int64)
    in_g = np.isin(codes, g_codes)
    copy = np.zeros(V.shape, dtype=np.int64)  # 0 = unassigned
    hit = is_high[V] & in_g & (u_r < retention_ratio(hi_j[V], hi_dt[V], params.g))
    if hit.any():
        vh = V[hit]
        copy[hit] = chosen_all[hi_off[vh] + pick_index(u_a[hit], hi_j[vh])]
    low_pos = ~is_high[V] & (low_d[V] > 0)
    if low_pos.any():
        copy[low_pos] = pick_index(u_a[low_pos], low_d[V[low_pos]]) + 1
    degs = {}
    for v, d in low.items():
        degs.update({(v, j): 0 for j in range(1, d + 1)})
    for v, (_, chosen) in high.items():
        degs.update({(v, int(j)): 0 for j in chosen})
    assigned = copy > 0
    pairs, counts = np.unique(np.stack([V[assigned], copy[assigned]], axis=1).reshape(-1, 2), axis=0, return_counts=True)
    for (v, j), c in zip(pairs.tolist(), counts.tolist()):
        degs[(v, j)] += c
    cons = {}
    for a in np.nonzero((copy > 0).all(axis=1))[0]:
        cid = cids[a]
        cons[cid] = (sk.F[cid][0], tuple(zip(V[a].tolist(), copy[a].tolist())))
    sample = CopyInstance(sigma, registry, cons, frozenset(high), degs)
    return StreamReduction(sample, high, low, gdeg)


@dataclass
class StreamResult:
    out: Fraction
    vtilde: float | None
    params: Params
    sketch: Sketch
    reduction: StreamReduction
    cset: list
    aggregate: object
    copies: int = 1
    peak_total: int = 0


def _finish(sk, params, tape, registry, sigma, a_loc, copies=1, peak_total=None):
    red = streaming_reduction(sk, params, tape, registry, sigma)
    cset = sk.cset()
    agg = aggregate(red.sample, cset, params, a_loc)
    vt = params.scale * float(agg.out) if params.alpha is not None else None
    return StreamResult(agg.out, vt, params, sk, red, cset, agg, copies, sk.peak if peak_total is None else peak_total)


def streaming_estimate(
    stream,
    n: int,
    cfg: EstimatorConfig,
    *,
    k: int,
    sigma: int,
    registry: PredicateRegistry,
    m: int | None = None,
    tape: RandomTape | None = None,
    a_loc: Callable = a_loc_default,
    chunk: int = CHUNK,
) -> StreamResult:
    """Sketch, reduce and aggregate in one pass; ``m=None`` runs the m-guessing wrapper."""
    tape = tape or RandomTape(cfg.seed)
    if m is None:
        return m_guess_wrapper(stream, n, cfg, k=k, sigma=sigma, registry=registry, tape=tape, a_loc=a_loc, chunk=chunk)
    if m == 0:
        raise CSPError("empty stream")
    params = cfg.resolve(n, k, sigma, m)
    sk = sketch_stream(stream, n, params, tape, chunk=chunk)
    if sk.count != m:
        raise CSPError(f"stream had {sk.count} constraints, expected {m}")
    return _finish(sk, params, tape, registry, sigma, a_loc)


def guess_index(m: int) -> int:
    """Index ``i`` with ``m`` in ``[2^i, 2^(i+1))``."""
    if m < 1:
        raise CSPError("m must be positive")
    return m.bit_length() - 1


def m_guess_wrapper(
    stream,
    n: int,
    cfg: EstimatorConfig,
    *,
    k: int,
    sigma: int,
    registry: PredicateRegistry,
    tape: RandomTape | None = None,
    a_loc: Callable = a_loc_default,
    max_index: int | None = None,
    chunk: int = CHUNK,
) -> StreamResult:
    """Run one sketch per guess ``m in [2^i, 2^(i+1))`` and keep the right one.

    Copies whose space cap is exceeded are dropped, and so are copies
    whose interval the stream has already passed.  Every copy reads the
    same tape.
    """
    tape = tape or RandomTape(cfg.seed)
    if max_index is None:
        max_index = max(1, math.ceil(2 * k * math.log2(max(n, 2))))
    copies = {}
    for i in range(max_index + 1):
        params = cfg.resolve(n, k, sigma, 2 ** (i + 1) - 1)
        copies[i] = _Sketcher(n, params, tape, make_hash(params, tape), space_cap(params))
    seen = 0
    peak_total = 0
    for ids, V, pids in _chunks(stream, chunk):
        seen += len(ids)
        for i in list(copies):
            if seen >= 2 ** (i + 1):
                del copies[i]
                continue
            try:
                copies[i].feed(ids, V, pids)
            except SpaceCapExceeded:
                del copies[i]
        peak_total = max(peak_total, sum(c.sk.size() for c in copies.values()))
        if not copies:
            raise CSPError("every m-guessing copy was terminated; check the space cap")
    if seen == 0:
        raise CSPError("empty stream")
    i = guess_index(seen)
    if i not in copies:
        raise CSPError(f"copy {i} for m={seen} did not survive")
    sketcher = copies[i]
    return _finish(sketcher.sk, sketcher.params, tape, registry, sigma, a_loc, copies=max_index + 1, peak_total=peak_total)


# ---------------------------------------------------------------------------
# coupled offline / streaming run


@dataclass
class CoupledResult:
    off: Fraction
    on: Fraction | None
    matched: bool
    diagnostics: dict
    off_vtilde: float | None = None
    on_vtilde: float | None = None

    @property
    def claim_failure(self) -> bool:
        return any(not ok for ok in self.diagnostics["claims"].values())


def coupled_run(inst: Instance, cfg: EstimatorConfig, seed: int, *, a_loc: Callable = a_loc_default, chunk: int = CHUNK) -> CoupledResult:
    """Run both estimators on one tape and compare them claim by claim.

    Claims checked: hash agreement, reservoir agreement, tier agreement,
    copy-count agreement, degree band, no termination, space cap,
    copy-sample agreement, and (as a consequence) an identical sampled
    sub-instance.  A mismatch is reported, never raised.
    """
    cfg = cfg.replace(policy="coupled-Gtilde", cset="reservoir", seed=seed)
    tape = RandomTape(seed)
    off = offline_estimate(inst, cfg, tape, policy=CoupledGtildePolicy(), a_loc=a_loc)
    params = off.params
    H = make_hash(params, tape)
    claims = {}
    diag = {"claims": claims}
    try:
        sk = sketch_stream(instance_stream(inst), inst.n, params, tape, H, cap=space_cap(params), chunk=chunk)
    except SpaceCapExceeded as exc:
        claims["space-cap"] = False
        diag["space"] = exc.used
        return CoupledResult(off.out, None, False, diag, off.vtilde)
    claims["space-cap"] = True
    diag["space"] = sk.peak

    deg = degrees(inst)
    used = np.nonzero(deg)[0]
    hashed = set(used[np.atleast_1d(H.sampled(used))].tolist()) if len(used) else set()
    claims["hash"] = hashed == sk.S
    claims["reservoir"] = sk.cset() == off.cset
    claims["band"] = not off.choice.band_violations
    claims["repeat-free"] = all(sk.degs[v] // params.B == deg[v] for v in sk.S)
    try:
        red = streaming_reduction(sk, params, tape, inst.registry, inst.sigma)
    except StreamTerminated as exc:
        claims["termination"] = False
        diag["terminated"] = exc.variable
        return CoupledResult(off.out, None, False, diag, off.vtilde)
    claims["termination"] = True
    high_off = set(np.nonzero(off.choice.high)[0].tolist())
    claims["tier"] = high_off == set(red.high)
    claims["dtilde"] = all(off.choice.dtilde[v] == red.high[v][0] for v in high_off & set(red.high)) and all(
        off.choice.dtilde[v] == d for v, d in red.low.items()
    )
    claims["copy-sample"] = all(
        np.array_equal(off.reduced.sampled_copies.get(v, []), red.high[v][1]) for v in high_off & set(red.high)
    )
    diag["isomorphic"] = red.sample.cons == off.sample.cons and {
        c: d for c, d in red.sample.degs.items()
    } == off.sample.degs
    agg = aggregate(red.sample, sk.cset(), params, a_loc)
    diag["fully_sampled"] = len(agg.contributions)
    vt = params.scale * float(agg.out) if params.alpha is not None else None
    return CoupledResult(off.out, agg.out, off.out == agg.out, diag, off.vtilde, vt)
