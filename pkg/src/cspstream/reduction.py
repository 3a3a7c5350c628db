"""Copy reduction, two-tier subsampling, and aggregation (offline side).

Copy assignment for high-degree variables is drawn through
:func:`high_position_hit` from the same tape entries the streaming
reduction consults.  Given the sampled copies, every position still picks
a uniform copy out of ``[dtilde(v)]`` independently, so the offline
algorithm has its usual distribution; the shared draws are what make the
two estimators agree outcome by outcome.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np

from .core import CSPError, Instance, degrees
from .hashing import KWiseHash
from .local import HIGH, LOW, CopyInstance, a_loc_default, ball_is_fully_sampled, count_dependencies, extract_ball
from .reservoir import Reservoir
from .tape import RandomTape

T_MAX_CAP = 64


# ---------------------------------------------------------------------------
# configuration


@dataclass
class EstimatorConfig:
    """User-facing knobs.  ``None`` means "derive the default from n, k, sigma"."""

    epsilon: float = 0.5
    delta: float = 0.05
    B: int | None = None
    rho: float | None = None
    r: int = 1
    T_max: int | None = None
    c_exp: float | None = None
    hash_range: int | None = None
    q_exp: float | None = None
    seed: int = 0
    eps_adv: float | None = None
    alpha: float | None = None
    policy: str = "exact"
    cset: str = "fisher-yates"
    cset_size: int | None = None
    space_cap: int | None = None

    def resolve(self, n: int, k: int, sigma: int, m: int) -> "Params":
        return Params.derive(self, n, k, sigma, m)

    def replace(self, **changes) -> "EstimatorConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Params:
    n: int
    m: int
    k: int
    sigma: int
    epsilon: float
    delta: float
    B: int
    rho: float
    cap: int  # floor(B / rho)
    r: int
    T_max: int
    nc: int  # integer hash range n^c
    c: float
    nq: float  # high/low threshold n^q on deg_G~
    s: int  # |C|
    s_clamped: bool
    eps_adv: float
    alpha: float | None
    policy: str
    cset: str
    space_cap: int

    @property
    def p(self) -> float:
        """Per-dependency sampling probability n^-c."""
        return 1.0 / self.nc

    @property
    def g(self) -> float:
        """Probability a (copy, position) pair enters G: 2 n^-c, capped at 1."""
        return min(1.0, 2.0 / self.nc)

    @property
    def hash_w(self) -> int:
        return 10 * self.T_max

    @property
    def scale(self) -> float:
        """alpha / (1 + 2 |Sigma|^k eps)."""
        if self.alpha is None:
            raise CSPError("integrality gap alpha not configured")
        return self.alpha / (1 + 2 * self.sigma**self.k * self.epsilon)

    @classmethod
    def derive(cls, cfg: EstimatorConfig, n, k, sigma, m):
        eps = cfg.epsilon
        if not eps > 0:
            raise CSPError("epsilon must be positive")
        B = cfg.B if cfg.B is not None else math.ceil(Fraction(sigma ** (2 * k)) / Fraction(eps))
        rho = cfg.rho if cfg.rho is not None else eps / (2 * k)
        cap = math.floor(Fraction(B) / Fraction(rho))
        T_max = cfg.T_max if cfg.T_max is not None else _capped_power(k * cap, cfg.r + 1, T_MAX_CAP)
        if cfg.hash_range is not None:
            nc = int(cfg.hash_range)
        elif cfg.c_exp is not None:
            nc = 1 if cfg.c_exp == 0 else max(2, round(n**cfg.c_exp))
        else:
            nc = 2
        if nc < 1:
            raise CSPError("hash range must be positive")
        c = math.log(nc) / math.log(n) if n > 1 else 0.0
        q = cfg.q_exp if cfg.q_exp is not None else eps
        nq = float(n) ** q
        total = m * B
        if cfg.cset == "all":
            s = total
        else:
            s = cfg.cset_size if cfg.cset_size is not None else max(1, round(n / nc))
        clamped = s > total
        s = max(1, min(s, total)) if total else 1
        eps_adv = cfg.eps_adv if cfg.eps_adv is not None else eps
        space_cap = cfg.space_cap or default_space_cap(n, k, B, c)
        return cls(
            n, m, k, sigma, eps, cfg.delta, B, rho, cap, cfg.r, T_max, nc, c, nq, s, clamped,
            eps_adv, cfg.alpha, cfg.policy, cfg.cset, space_cap,
        )

    def echo(self) -> dict:
        d = asdict(self)
        d["p"] = self.p
        d["g"] = self.g
        return d


def _capped_power(base: int, exp: int, cap: int) -> int:
    """``min(cap, base ** exp)`` without forming huge powers."""
    out = 1
    for _ in range(exp):
        out *= base
        if out >= cap or base <= 1:
            return min(out, cap)
    return out


def default_space_cap(n, k, B, c) -> int:
    return int(math.ceil(64 * k * B * n ** (1 - c / 3)))


# ---------------------------------------------------------------------------
# shared randomized decisions (offline and streaming use exactly these)


def pick_index(u, d):
    """0-based uniform index ``floor(u * d)``; arrays broadcast."""
    return np.floor(np.asarray(u) * np.asarray(d)).astype(np.int64)


def retention_ratio(j, dt, g):
    """``j / (dt * g)``: retention probability of a G pair on a high-degree parent."""
    return np.asarray(j, dtype=np.float64) / (np.asarray(dt, dtype=np.float64) * g)


def high_position_hit(u_g, u_r, j, dt, g):
    """Whether a (copy, position) pair on a high-degree parent reaches a sampled copy.

    Streaming: the pair enters G when ``u_g < g`` and is retained when
    ``u_r < j / (dt * g)``, overall probability ``j / dt``.  When that
    ratio exceeds 1 the streaming side terminates; the offline side falls
    back to ``u_g < j / dt`` so its marginal stays ``j / dt``.
    Returns ``(hit, overflow)``.
    """
    u_g, u_r = np.asarray(u_g), np.asarray(u_r)
    ratio = retention_ratio(j, dt, g)
    overflow = ratio > 1
    fallback = np.asarray(j, dtype=np.float64) / np.asarray(dt, dtype=np.float64)
    hit = np.where(overflow, u_g < fallback, (u_g < g) & (u_r < ratio))
    return hit, overflow


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def is_high(raw: Fraction, params: Params) -> bool:
    """Offline threshold ``dtilde > n^(q+c) / B`` with n^(q+c) read as n^q * nc."""
    return raw * params.B / params.nc > params.nq


# ---------------------------------------------------------------------------
# adversary policies


class AdversaryPolicy:
    """Chooses a (real) degree estimate per variable; offline rounds and clamps it."""

    name = "abstract"

    def raw(self, inst: Instance, deg: np.ndarray, params: Params, tape: RandomTape) -> list:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class ExactPolicy(AdversaryPolicy):
    name = "exact"

    def raw(self, inst, deg, params, tape):
        return [Fraction(int(d)) for d in deg]


class CoupledGtildePolicy(AdversaryPolicy):
    """``deg_G~(v) * n^c / B``, from the same G~ draws the sketch makes."""

    name = "coupled-Gtilde"

    def raw(self, inst, deg, params, tape):
        gdeg = gtilde_degrees(inst, params, tape)
        return [Fraction(int(d) * params.nc, params.B) for d in gdeg]


class WorstCaseRandomPolicy(AdversaryPolicy):
    """Uniform multiplicative error within the permitted band."""

    name = "worst-case-random"

    def raw(self, inst, deg, params, tape):
        u = np.atleast_1d(tape.uniform("adversary", np.arange(inst.n)))
        eps = Fraction(params.eps_adv)
        return [Fraction(int(d)) * (1 + eps * (2 * Fraction(float(x)) - 1)) for d, x in zip(deg, u)]


POLICIES = {p.name: p for p in (ExactPolicy, CoupledGtildePolicy, WorstCaseRandomPolicy)}


def make_policy(policy) -> AdversaryPolicy:
    if isinstance(policy, AdversaryPolicy):
        return policy
    try:
        return POLICIES[policy]()
    except KeyError:
        raise CSPError(f"unknown adversary policy {policy!r}") from None


def gtilde_degrees(inst: Instance, params: Params, tape: RandomTape) -> np.ndarray:
    """``deg_G~(v)``: pairs ``((i,l), t)`` with parent v drawn into G~ (prob n^-c)."""
    V = inst.var_array()
    m, k = V.shape
    i, l, t = np.ix_(np.arange(m), np.arange(params.B), np.arange(k))
    inside = tape.uniform("G~", i, l, t) < params.p
    parents = np.broadcast_to(V[:, None, :], inside.shape)
    return np.bincount(parents[inside], minlength=inst.n)


@dataclass
class DegreeChoice:
    dtilde: np.ndarray  # integer copies per variable (deg_I for low tier)
    high: np.ndarray  # bool per variable
    raw: list  # policy output before clamping
    band_violations: list  # variables whose policy output left the band


def choose_degrees(inst: Instance, params: Params, policy, tape: RandomTape, tiered=True) -> DegreeChoice:
    """Adversary step plus the high/low split.

    Low-degree variables get ``dtilde = deg_I``.  High-degree ones get the
    policy value rounded half-up, clamped into the integer band
    ``[(1 - eps_adv) deg, (1 + eps_adv) deg]``; clamping is recorded.
    """
    policy = make_policy(policy)
    deg = degrees(inst)
    raw = policy.raw(inst, deg, params, tape)
    eps = Fraction(params.eps_adv)
    dtilde = np.zeros(inst.n, dtype=np.int64)
    high = np.zeros(inst.n, dtype=bool)
    violations = []
    for v in range(inst.n):
        d = int(deg[v])
        if d == 0:
            continue
        lo = max(1, math.ceil((1 - eps) * d))
        hi = max(lo, math.floor((1 + eps) * d))
        est = raw[v]
        if not lo <= round_half_up(est) <= hi:
            violations.append(v)
            est = min(max(est, Fraction(lo)), Fraction(hi))
        if tiered and is_high(est, params):
            high[v] = True
            dtilde[v] = min(max(round_half_up(est), lo), hi)
        elif tiered:
            dtilde[v] = d
        else:
            dtilde[v] = min(max(round_half_up(est), lo), hi)
    return DegreeChoice(dtilde, high, raw, violations)


# ---------------------------------------------------------------------------
# reduced instances


@dataclass
class ReducedInstance:
    """Output of the copy reduction.

    ``wiring[i, l, t]`` is the (1-based) copy of ``C_i^t`` used by
    constraint copy ``(i, l)``; ``dummy`` marks copies replaced by
    always-false constraints.
    """

    base: Instance
    B: int
    dtilde: np.ndarray
    high: np.ndarray
    wiring: np.ndarray
    dummy: np.ndarray = None
    sampled_copies: dict = field(default_factory=dict)  # high v -> sorted sampled copy indices

    def __post_init__(self):
        if self.dummy is None:
            self.dummy = np.zeros(self.wiring.shape[:2], dtype=bool)

    @property
    def parents(self) -> np.ndarray:
        return self.base.var_array()

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dtilde)[:-1]]).astype(np.int64)

    @property
    def n_copies(self) -> int:
        return int(self.dtilde.sum())

    def gids(self) -> np.ndarray:
        """Global copy ids, shape ``(m, B, k)``."""
        return self.offsets[self.parents][:, None, :] + self.wiring - 1

    def copy_of(self, gid: int) -> tuple:
        v = int(np.searchsorted(self.offsets, gid, side="right") - 1)
        while self.dtilde[v] == 0:
            v -= 1
        return (v, int(gid - self.offsets[v] + 1))

    def copy_degrees(self, live_only=True) -> np.ndarray:
        """Degree per global copy id, one count per position."""
        g = self.gids()
        if live_only:
            g = g[~self.dummy]
        return np.bincount(g.ravel(), minlength=self.n_copies)

    def copy_instance(self, copy_mask=None, degs=None) -> CopyInstance:
        """The reduced instance (or its sub-instance induced by ``copy_mask``)."""
        g = self.gids()
        W = self.wiring
        P = self.parents
        keep = np.ones(self.dummy.shape, dtype=bool) if copy_mask is None else copy_mask[g].all(axis=2)
        cons = {}
        preds = [c.pred for c in self.base.constraints]
        dummy = set()
        for i, l in zip(*np.nonzero(keep)):
            i, l = int(i), int(l)
            cons[(i, l)] = (preds[i], tuple((int(v), int(j)) for v, j in zip(P[i], W[i, l])))
            if self.dummy[i, l]:
                dummy.add((i, l))
        high = frozenset(int(v) for v in np.nonzero(self.high)[0])
        if degs is None:
            deg = self.copy_degrees(live_only=True)
            present = range(self.n_copies) if copy_mask is None else np.nonzero(copy_mask)[0]
            degs = {self.copy_of(int(x)): int(deg[x]) for x in present}
        return CopyInstance(self.base.sigma, self.base.registry, cons, high, degs, frozenset(dummy))

    def dumps(self) -> str:
        ci = self.copy_instance()
        text = ci.dumps()
        tiers = [f"tier {v} {HIGH if self.high[v] else LOW}" for v in range(self.base.n) if self.dtilde[v]]
        return text + "\n".join(tiers) + ("\n" if tiers else "")


def _high_copy_samples(high_vars, dtilde, params: Params, tape: RandomTape) -> dict:
    """Sampled copy indices (1-based) of each high-degree variable, prob n^-c each."""
    out = {}
    for v in high_vars:
        idx = np.arange(1, int(dtilde[v]) + 1)
        draws = np.atleast_1d(tape.uniform("copy-sample", v, idx))
        out[int(v)] = idx[draws < params.p]
    return out


def wire_copies(inst: Instance, B: int, dtilde, high, tape: RandomTape, params: Params | None):
    """Uniform copy choice for every ``(i, l, t)``; see module docstring.

    Returns ``(wiring, sampled_copies)``.
    """
    V = inst.var_array()
    m, k = V.shape
    i, l, t = np.ix_(np.arange(m), np.arange(B), np.arange(k))
    parents = np.broadcast_to(V[:, None, :], (m, B, k))
    d = dtilde[parents]
    if np.any(d[...] < 1):
        raise CSPError("a variable with positive degree received no copies")
    u_a = tape.uniform("copy-assign", i, l, t)
    wiring = pick_index(u_a, d) + 1
    sampled = {}
    if params is not None and high is not None and high.any():
        hv = np.nonzero(high)[0]
        sampled = _high_copy_samples(hv, dtilde, params, tape)
        pos = high[parents]
        pi, pl, pt = np.nonzero(pos)
        pv = parents[pos]
        u_g = tape.uniform("G", pi, pl, pt)
        u_r = tape.uniform("resample", pi, pl, pt)
        u_a_h = u_a[pos]
        jcount = np.zeros(inst.n, dtype=np.int64)
        s_off = np.zeros(inst.n, dtype=np.int64)
        u_off = np.zeros(inst.n, dtype=np.int64)
        s_all, u_all = [], []
        so = uo = 0
        for v in hv:
            chosen = sampled[int(v)]
            rest = np.setdiff1d(np.arange(1, dtilde[v] + 1), chosen)
            jcount[v] = len(chosen)
            s_off[v], u_off[v] = so, uo
            s_all.append(chosen)
            u_all.append(rest)
            so += len(chosen)
            uo += len(rest)
        s_all = np.concatenate(s_all) if s_all else np.zeros(0, dtype=np.int64)
        u_all = np.concatenate(u_all) if u_all else np.zeros(0, dtype=np.int64)
        hit, _ = high_position_hit(u_g, u_r, jcount[pv], dtilde[pv], params.g)
        out = np.empty(len(pv), dtype=np.int64)
        if hit.any():
            out[hit] = s_all[s_off[pv[hit]] + pick_index(u_a_h[hit], jcount[pv[hit]])]
        miss = ~hit
        if miss.any():
            out[miss] = u_all[u_off[pv[miss]] + pick_index(u_a_h[miss], (dtilde - jcount)[pv[miss]])]
        wiring[pos] = out
    return wiring, sampled


def trevisan_reduce(inst: Instance, B: int, policy, tape: RandomTape, params: Params | None = None) -> ReducedInstance:
    """Split each variable into copies: ``B`` copies per constraint, uniform copy wiring."""
    if params is None:
        params = EstimatorConfig(B=B).resolve(max(inst.n, 2), max(inst.k, 1), inst.sigma, inst.m)
    choice = choose_degrees(inst, params, policy, tape, tiered=False)
    if choice.band_violations and not isinstance(make_policy(policy), CoupledGtildePolicy):
        raise CSPError(f"policy output outside the band for variables {choice.band_violations[:5]}")
    wiring, _ = wire_copies(inst, B, choice.dtilde, None, tape, None)
    return ReducedInstance(inst, B, choice.dtilde, choice.high, wiring)


def bound_degree(R: ReducedInstance, cap: int):
    """Replace constraint copies touching an over-cap copy by always-false dummies.

    Returns ``(R_bdd, degs_bdd)`` with ``degs_bdd`` indexed by global copy id.
    """
    deg = R.copy_degrees(live_only=True)
    over = deg > cap
    dummy = R.dummy | over[R.gids()].any(axis=2)
    R_bdd = replace(R, dummy=dummy)
    return R_bdd, R_bdd.copy_degrees(live_only=True)


def offline_sample(R: ReducedInstance, params: Params, H: KWiseHash, tape: RandomTape) -> np.ndarray:
    """Boolean mask over global copy ids: the sampled set S'."""
    mask = np.zeros(R.n_copies, dtype=bool)
    off = R.offsets
    vs = np.nonzero(R.dtilde)[0]
    low = vs[~R.high[vs]]
    if len(low):
        hit = np.atleast_1d(H.sampled(low))
        for v in low[hit]:
            mask[off[v] : off[v] + R.dtilde[v]] = True
    for v in vs[R.high[vs]]:
        chosen = R.sampled_copies.get(int(v))
        if chosen is None:
            idx = np.arange(1, R.dtilde[v] + 1)
            chosen = idx[np.atleast_1d(tape.uniform("copy-sample", int(v), idx)) < params.p]
        mask[off[v] + np.asarray(chosen, dtype=np.int64) - 1] = True
    return mask


def induced_sample(R: ReducedInstance, mask: np.ndarray) -> CopyInstance:
    """``I'[S']`` with ``degs'`` = full degree in ``I'`` for each sampled copy."""
    deg = R.copy_degrees(live_only=False)
    degs = {R.copy_of(int(x)): int(deg[x]) for x in np.nonzero(mask)[0]}
    return R.copy_instance(copy_mask=mask, degs=degs)


# ---------------------------------------------------------------------------
# constraint-copy sample C


def fisher_yates_cset(m: int, B: int, s: int, tape: RandomTape) -> list:
    N = m * B
    s = min(s, N)
    perm = np.arange(N)
    u = np.atleast_1d(tape.uniform("cset", np.arange(s)))
    for a in range(s):
        b = a + int(u[a] * (N - a))
        perm[a], perm[b] = perm[b], perm[a]
    return sorted((int(x) // B, int(x) % B) for x in perm[:s])


def reservoir_cset(order, B: int, s: int, tape: RandomTape) -> list:
    """Replay of the streaming reservoir over constraint indices in ``order``."""
    res = Reservoir(s)
    res.extend([(int(i), l) for i in order for l in range(B)], tape)
    return sorted(res.slots)


def sample_cset(params: Params, tape: RandomTape, order=None) -> list:
    m, B, s = params.m, params.B, params.s
    if params.cset == "all" or s >= m * B:
        return [(i, l) for i in range(m) for l in range(B)]
    if params.cset == "reservoir":
        return reservoir_cset(range(m) if order is None else order, B, s, tape)
    if params.cset == "fisher-yates":
        return fisher_yates_cset(m, B, s, tape)
    raise CSPError(f"unknown C sampler {params.cset!r}")


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class AggregateResult:
    out: Fraction
    contributions: list  # (cid, T, a_loc value)
    dummies: int
    size: int

    def __float__(self):
        return float(self.out)


def degree_bound_sample(sample: CopyInstance, cap: int):
    """Dummy out sampled constraints touching an over-cap copy.

    Only removals visible in the sample are subtracted from ``degs'``.
    Returns ``(bounded sample, degs_bdd)``.
    """
    over = {c for c, d in sample.degs.items() if d > cap}
    dummy = set(sample.dummy)
    degs = dict(sample.degs)
    for cid, (_, copies) in sample.cons.items():
        if cid in dummy:
            continue
        if any(c in over for c in copies):
            dummy.add(cid)
            for c in copies:
                degs[c] -= 1
    bounded = sample.with_dummies(dummy)
    bounded.degs = degs
    return bounded, degs


def aggregate(sample: CopyInstance, cset, params: Params, a_loc: Callable = a_loc_default) -> AggregateResult:
    """Average of scaled local values over the fully sampled centers of ``cset``."""
    bounded, degs = degree_bound_sample(sample, params.cap)
    total = Fraction(0)
    contributions = []
    for cid in sorted(cset):
        if cid not in bounded.cons or bounded.is_dummy(cid):
            continue
        if not ball_is_fully_sampled(bounded, cid, params.r, degs):
            continue
        ball = extract_ball(bounded, cid, params.r)
        T = count_dependencies(ball)
        value = Fraction(a_loc(ball))
        contributions.append((cid, T, value))
        total += value * params.nc**T
    size = len(cset)
    if size == 0:
        raise CSPError("empty constraint sample")
    return AggregateResult(total / size, contributions, len(bounded.dummy), size)


def local_average(R_bdd: ReducedInstance, r: int, a_loc: Callable = a_loc_default) -> Fraction:
    """``(1/mB) sum_{i,l} a_loc(N(i,l), r)`` over the full bounded instance."""
    ci = R_bdd.copy_instance()
    total = Fraction(0)
    for cid in sorted(ci.cons):
        if ci.is_dummy(cid):
            continue
        total += Fraction(a_loc(extract_ball(ci, cid, r)))
    return total / len(ci.cons)


# ---------------------------------------------------------------------------
# offline estimator


@dataclass
class OfflineResult:
    out: Fraction
    vtilde: float | None
    params: Params
    choice: DegreeChoice
    reduced: ReducedInstance
    sample: CopyInstance
    cset: list
    aggregate: AggregateResult

    def summary(self) -> dict:
        return {
            "out": float(self.out),
            "vtilde": self.vtilde,
            "cset_size": len(self.cset),
            "cset_clamped": self.params.s_clamped,
            "fully_sampled": len(self.aggregate.contributions),
            "high_vars": int(self.choice.high.sum()),
            "band_violations": len(self.choice.band_violations),
        }


def make_hash(params: Params, tape: RandomTape) -> KWiseHash:
    return KWiseHash.from_tape(tape, params.hash_w, params.nc, params.n)


def offline_estimate(
    inst: Instance,
    cfg: EstimatorConfig,
    tape: RandomTape | None = None,
    *,
    policy=None,
    a_loc: Callable = a_loc_default,
    H: KWiseHash | None = None,
) -> OfflineResult:
    """Reduce, subsample in two tiers, and aggregate (all constraints must share one arity)."""
    tape = tape or RandomTape(cfg.seed)
    params = cfg.resolve(inst.n, inst.k, inst.sigma, inst.m)
    if inst.m == 0:
        raise CSPError("empty instance")
    choice = choose_degrees(inst, params, policy or cfg.policy, tape)
    wiring, sampled = wire_copies(inst, params.B, choice.dtilde, choice.high, tape, params)
    R = ReducedInstance(inst, params.B, choice.dtilde, choice.high, wiring, sampled_copies=sampled)
    H = H or make_hash(params, tape)
    mask = offline_sample(R, params, H, tape)
    sample = induced_sample(R, mask)
    cset = sample_cset(params, tape)
    agg = aggregate(sample, cset, params, a_loc)
    vtilde = params.scale * float(agg.out) if params.alpha is not None else None
    return OfflineResult(agg.out, vtilde, params, choice, R, sample, cset, agg)
