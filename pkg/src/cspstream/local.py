"""Neighborhoods in reduced instances and the local map evaluated on them.

Reduced instances live on variable *copies* ``(parent, j)`` and constraint
copies ``cid = (i, l)``.  Two constraint copies are adjacent when they share
a variable copy.  Constraints replaced by always-false dummies stay in the
instance (a dummy center scores 0) but carry no adjacency.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .core import CSPError, Constraint, Instance, PredicateRegistry
from .lp import lp_center_value

LOW, HIGH = "low", "high"


def copy_label(copy) -> str:
    return f"v{copy[0]}.{copy[1]}"


@dataclass
class CopyInstance:
    """A (sub-)instance over variable copies.

    ``cons`` maps a constraint-copy id to ``(pred_id, copies)``.  ``high``
    holds the parents marked high-degree; every other parent is low.
    ``degs`` is the recorded degree map handed to aggregation (may be
    empty when degrees are read off the instance itself).
    """

    sigma: int
    registry: PredicateRegistry
    cons: dict
    high: frozenset = frozenset()
    degs: dict = field(default_factory=dict)
    dummy: frozenset = frozenset()
    _adj: dict = field(default=None, repr=False, compare=False)

    def tier(self, copy) -> str:
        return HIGH if copy[0] in self.high else LOW

    def is_dummy(self, cid) -> bool:
        return cid in self.dummy or self.registry[self.cons[cid][0]].trivially_false

    @property
    def adjacency(self) -> dict:
        """copy -> list of live constraint ids, one entry per position."""
        if self._adj is None:
            adj = defaultdict(list)
            for cid, (_, copies) in self.cons.items():
                if cid in self.dummy:
                    continue
                for c in copies:
                    adj[c].append(cid)
            self._adj = adj
        return self._adj

    def live_degree(self, copy) -> int:
        return len(self.adjacency.get(copy, ()))

    def copies(self) -> set:
        out = set()
        for _, copies in self.cons.values():
            out.update(copies)
        return out

    def with_dummies(self, dummy) -> "CopyInstance":
        return CopyInstance(self.sigma, self.registry, self.cons, self.high, self.degs, frozenset(dummy))

    def dumps(self) -> str:
        """csp-core text format with copies rendered ``v<parent>.<copy>``."""
        order = {}
        for cid in sorted(self.cons):
            order.setdefault(self.cons[cid][0], len(order))
        copies = sorted(self.copies())
        k = max((len(c[1]) for c in self.cons.values()), default=0)
        lines = [f"csp {len(copies)} {len(self.cons)} {self.sigma} {k}"]
        for pid, new in order.items():
            lines.append(f"pred {new} {self.registry[pid].bitstring()}")
        for cid in sorted(self.cons):
            pid, cps = self.cons[cid]
            pid = order[pid]
            tag = " dummy" if cid in self.dummy else ""
            lines.append(f"c {pid} " + " ".join(copy_label(c) for c in cps) + f"  # {cid[0]}.{cid[1]}{tag}")
        return "\n".join(lines) + "\n"


@dataclass
class NeighborhoodBall:
    center: tuple
    radius: int
    sigma: int
    registry: PredicateRegistry
    cons: dict  # cid -> (pred_id, copies), keys sorted
    tiers: dict  # copy -> LOW/HIGH
    degrees: dict  # copy -> recorded degree in the full reduced instance
    center_dummy: bool = False

    def copies(self) -> list:
        return sorted(self.tiers)

    def __len__(self):
        return len(self.cons)

    def to_instance(self):
        """Ball as a plain ``Instance``; returns ``(instance, center index, copy order)``."""
        copies = self.copies()
        index = {c: n for n, c in enumerate(copies)}
        cids = sorted(self.cons)
        cons = [Constraint(tuple(index[c] for c in self.cons[cid][1]), self.cons[cid][0]) for cid in cids]
        inst = Instance(len(copies), cons, self.sigma, self.registry)
        return inst, cids.index(self.center), copies

    def dumps(self) -> str:
        """Ball in the text format plus one ``tier <parent> <low|high>`` line per copy."""
        inst, _, copies = self.to_instance()
        text = inst.dumps()
        text += "".join(f"tier {c[0]} {self.tiers[c]}\n" for c in copies)
        return text

    def relabel(self, copy_map: Callable, cid_map: Callable) -> "NeighborhoodBall":
        cons = {cid_map(cid): (p, tuple(copy_map(c) for c in cps)) for cid, (p, cps) in self.cons.items()}
        return NeighborhoodBall(
            cid_map(self.center),
            self.radius,
            self.sigma,
            self.registry,
            dict(sorted(cons.items())),
            {copy_map(c): t for c, t in self.tiers.items()},
            {copy_map(c): d for c, d in self.degrees.items()},
            self.center_dummy,
        )


def _bfs(inst: CopyInstance, center, radius):
    """Constraint ids within ``radius`` hops of ``center`` (live edges only).

    Returns ``(constraints, layers)`` where ``layers[t]`` is the set of
    copies first reached by the radius-``t`` ball.
    """
    if center not in inst.cons:
        raise CSPError(f"unknown center {center}")
    adj = inst.adjacency
    seen_cons = {center}
    seen_copies = set(inst.cons[center][1])
    layers = [set(seen_copies)]
    frontier = sorted(seen_copies)
    if inst.is_dummy(center):
        return seen_cons, layers
    for _ in range(radius):
        new_cons = sorted({cid for c in frontier for cid in adj.get(c, ()) if cid not in seen_cons})
        seen_cons.update(new_cons)
        fresh = []
        for cid in new_cons:
            for c in inst.cons[cid][1]:
                if c not in seen_copies:
                    seen_copies.add(c)
                    fresh.append(c)
        layers.append(set(fresh))
        frontier = sorted(fresh)
        if not new_cons:
            break
    return seen_cons, layers


def extract_ball(inst: CopyInstance, center, r: int) -> NeighborhoodBall:
    """Breadth-first r-ball around a constraint copy."""
    if r < 0:
        raise CSPError("radius must be non-negative")
    cids, _ = _bfs(inst, center, r)
    cons = {cid: inst.cons[cid] for cid in sorted(cids)}
    copies = {c for _, cps in cons.values() for c in cps}
    degrees = {c: inst.degs.get(c, inst.live_degree(c)) for c in copies}
    return NeighborhoodBall(
        center,
        r,
        inst.sigma,
        inst.registry,
        cons,
        {c: inst.tier(c) for c in copies},
        degrees,
        inst.is_dummy(center),
    )


def a_loc_default(ball: NeighborhoodBall) -> Fraction:
    """BasicLP on the ball; the center's best objective share among optimal solutions."""
    if ball.center_dummy or ball.registry[ball.cons[ball.center][0]].trivially_false:
        return Fraction(0)
    inst, center, _ = ball.to_instance()
    value = lp_center_value(inst, center)
    if not 0 <= value <= 1:
        raise CSPError(f"local map left [0,1]: {value}")
    return value


def count_dependencies(ball: NeighborhoodBall) -> int:
    """High-tier copies plus distinct parents of low-tier copies."""
    if not ball.tiers:
        raise CSPError("empty ball")
    high = sum(1 for t in ball.tiers.values() if t == HIGH)
    low_parents = {c[0] for c, t in ball.tiers.items() if t == LOW}
    return high + len(low_parents)


def ball_is_fully_sampled(sample: CopyInstance, center, r: int, recorded: dict) -> bool:
    """Whether the whole r-ball of ``center`` survived sampling.

    Checks that the center is present and every copy within radius r-1
    (explored inside the sample) has its full recorded degree.
    """
    if center not in sample.cons:
        return False
    if r == 0:
        return True
    _, layers = _bfs(sample, center, r - 1)
    for layer in layers:
        for c in layer:
            if c not in recorded:
                raise CSPError(f"no degree record for copy {copy_label(c)}")
            if sample.live_degree(c) != recorded[c]:
                return False
    return True


class ParentValueOracle:
    """Oracle local map for balls that cover whole components.

    Projects the ball onto parent variables, finds the lexicographically
    first optimal parent assignment by enumeration, and scores the center
    on it.  Averaging over all centers of a component gives that
    component's exact value.  Results are cached per parent structure.
    """

    def __init__(self):
        self._cache = {}

    def __call__(self, ball: NeighborhoodBall) -> Fraction:
        from .core import best_assignment

        if ball.center_dummy:
            return Fraction(0)
        live = [(p, cps) for cid, (p, cps) in ball.cons.items()]
        parents = sorted({c[0] for _, cps in live for c in cps})
        pidx = {v: n for n, v in enumerate(parents)}
        counts = defaultdict(int)
        for p, cps in live:
            counts[(p, tuple(pidx[c[0]] for c in cps))] += 1
        key = (tuple(parents), tuple(sorted(counts.items())))
        tau = self._cache.get(key)
        if tau is None:
            items = sorted(counts.items())
            _, tau = best_assignment(
                len(parents),
                ball.sigma,
                [vs for (_, vs), _ in items],
                [ball.registry[p].table for (p, _), _ in items],
                [w for _, w in items],
            )
            self._cache[key] = tau
        p, cps = ball.cons[ball.center]
        return Fraction(ball.registry[p](*(tau[pidx[c[0]]] for c in cps)))
