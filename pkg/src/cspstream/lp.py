"""The BasicLP relaxation, solved exactly over the rationals.

The solver is a dense two-phase tableau simplex over ``gmpy2.mpq``.  It
prices with the largest reduced cost and falls back to Bland's rule
whenever that choice would make a degenerate pivot, so it terminates
without perturbation.  LPs here are small (whole desk-scale instances
and r-balls), so exactness is affordable and removes tolerances from
everything downstream.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass
from fractions import Fraction

from gmpy2 import mpq

from .core import CSPError, Instance, Predicate, brute_force_val

DEFAULT_DIMENSION_CAP = 20000
_ZERO = mpq(0)


class LPError(RuntimeError):
    """LP failure that cannot happen for a well-formed BasicLP."""


class LPTooLarge(CSPError):
    pass


def _frac(q) -> Fraction:
    return Fraction(int(q.numerator), int(q.denominator))


class _Tableau:
    """Equality-form LP ``max c.x, A x = b, x >= 0`` with artificial start basis."""

    def __init__(self, rows, rhs, ncols):
        self.ncols = ncols
        self.nart = len(rows)
        width = ncols + self.nart + 1
        self.T = []
        for r, (row, b) in enumerate(zip(rows, rhs)):
            line = [_ZERO] * width
            sign = -1 if b < 0 else 1
            for j, a in row.items():
                line[j] = mpq(sign * a)
            line[ncols + r] = mpq(1)
            line[-1] = mpq(sign * b)
            self.T.append(line)
        self.basis = [ncols + r for r in range(self.nart)]
        self.objectives = []

    def add_objective(self, c) -> int:
        """Register an objective (dict col -> coeff); returns its row id."""
        width = self.ncols + self.nart + 1
        z = [_ZERO] * width
        for j, a in c.items():
            z[j] = mpq(a)
        for i, bj in enumerate(self.basis):
            cb = z[bj]
            if cb:
                row = self.T[i]
                for j in range(width):
                    if row[j]:
                        z[j] -= cb * row[j]
        # z[-1] holds minus the current objective value
        self.objectives.append(z)
        return len(self.objectives) - 1

    def pivot(self, r, col):
        row = self.T[r]
        piv = row[col]
        if piv != 1:
            inv = 1 / piv
            for j in range(len(row)):
                if row[j]:
                    row[j] *= inv
        nz = [j for j, v in enumerate(row) if v]
        for i, other in enumerate(self.T):
            if i != r:
                f = other[col]
                if f:
                    for j in nz:
                        other[j] -= f * row[j]
        for z in self.objectives:
            f = z[col]
            if f:
                for j in nz:
                    z[j] -= f * row[j]
        self.basis[r] = col

    def _ratio(self, col):
        best, best_r = None, None
        for i, row in enumerate(self.T):
            a = row[col]
            if a > 0:
                t = row[-1] / a
                if best is None or t < best or (t == best and self.basis[i] < self.basis[best_r]):
                    best, best_r = t, i
        return best, best_r

    def optimize(self, obj: int, allowed):
        z = self.objectives[obj]
        while True:
            cands = [j for j in allowed if z[j] > 0]
            if not cands:
                return
            col = max(cands, key=lambda j: (z[j], -j))
            t, r = self._ratio(col)
            if t is not None and t == 0:
                col = min(cands)
                t, r = self._ratio(col)
            if r is None:
                raise LPError("unbounded LP")
            self.pivot(r, col)

    def value(self, obj: int):
        return -self.objectives[obj][-1]

    def solution(self):
        x = [_ZERO] * self.ncols
        for i, bj in enumerate(self.basis):
            if bj < self.ncols:
                x[bj] = self.T[i][-1]
        return x


def solve_lp(rows, rhs, ncols, objective, secondary=None):
    """Maximize ``objective`` subject to ``rows . x = rhs, x >= 0``.

    ``rows`` are sparse dicts ``{col: coeff}``.  With ``secondary`` given,
    its maximum over the optimal face of ``objective`` is also returned.
    Returns ``(x, value, secondary_value)`` with mpq entries.
    """
    tab = _Tableau(rows, rhs, ncols)
    art = range(ncols, ncols + tab.nart)
    phase1 = tab.add_objective({j: -1 for j in art})
    main = tab.add_objective(objective)
    second = tab.add_objective(secondary) if secondary is not None else None
    tab.optimize(phase1, range(ncols))
    if tab.value(phase1) != 0:
        raise LPError("infeasible LP")
    # drive zero-level artificials out of the basis; drop redundant rows
    r = 0
    while r < len(tab.T):
        if tab.basis[r] >= ncols:
            row = tab.T[r]
            col = next((j for j in range(ncols) if row[j]), None)
            if col is None:
                del tab.T[r]
                del tab.basis[r]
                continue
            tab.pivot(r, col)
        r += 1
    tab.objectives[phase1] = None
    tab.objectives = [z for z in tab.objectives if z is not None]
    main -= 1
    if second is not None:
        second -= 1
    tab.optimize(main, range(ncols))
    value = tab.value(main)
    value2 = None
    if second is not None:
        zmain = tab.objectives[main]
        face = [j for j in range(ncols) if not zmain[j] < 0]
        tab.optimize(second, face)
        value2 = tab.value(second)
    return tab.solution(), value, value2


# ---------------------------------------------------------------------------
# BasicLP


@dataclass
class LpSolution:
    x: dict
    z: dict
    objective: Fraction

    def to_json(self) -> str:
        return json.dumps(
            {
                "objective": str(self.objective),
                "x": {f"{v},{s}": str(q) for (v, s), q in sorted(self.x.items())},
                "z": {
                    f"{i}:{''.join(map(str, b))}": str(q)
                    for (i, b), q in sorted(self.z.items())
                    if q
                },
            },
            indent=1,
        )


@dataclass(frozen=True)
class IntegralityGapEstimate:
    alpha: Fraction
    provenance: str  # "known" or "empirical"

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise CSPError("integrality gap must lie in (0, 1]")


KNOWN_ALPHA = {
    "maxdicut": Fraction(1, 2),
    "maxcut": Fraction(1, 2),
}


class BasicLP:
    """Column/row layout of the BasicLP for an instance.

    Columns: ``x[v, s]`` at ``v * sigma + s``, then ``z[i, b]`` in blocks of
    ``sigma ** arity_i``.  Rows: one normalization row per variable, then one
    marginal-consistency row per ``(i, position j, symbol s)``, emitted even
    when two positions name the same variable.
    """

    def __init__(self, inst: Instance, dimension_cap=DEFAULT_DIMENSION_CAP):
        if inst.m == 0:
            raise CSPError("BasicLP of an empty instance is undefined")
        self.inst = inst
        sigma = inst.sigma
        self.nx = inst.n * sigma
        self.zoff = []
        col = self.nx
        for c in inst.constraints:
            self.zoff.append(col)
            col += sigma ** len(c.vars)
        self.ncols = col
        if self.ncols > dimension_cap:
            raise LPTooLarge(f"BasicLP has {self.ncols} variables, cap is {dimension_cap}")
        self.rows, self.rhs = [], []
        for v in range(inst.n):
            self.rows.append({v * sigma + s: 1 for s in range(sigma)})
            self.rhs.append(1)
        for i, c in enumerate(inst.constraints):
            k = len(c.vars)
            tuples = list(itertools.product(range(sigma), repeat=k))
            for j, v in enumerate(c.vars):
                for s in range(sigma):
                    row = {self.zoff[i] + bi: 1 for bi, b in enumerate(tuples) if b[j] == s}
                    row[v * sigma + s] = row.get(v * sigma + s, 0) - 1
                    self.rows.append(row)
                    self.rhs.append(0)

    def objective(self, which=None):
        """Integer objective ``sum f_i(b) z[i,b]`` (over ``which`` constraints)."""
        obj = {}
        idx = range(self.inst.m) if which is None else which
        for i in idx:
            pred = self.inst.predicate(i)
            for bi, f in enumerate(pred.table):
                if f:
                    obj[self.zoff[i] + bi] = 1
        return obj

    def solve(self, secondary_center=None):
        sec = self.objective([secondary_center]) if secondary_center is not None else None
        x, value, value2 = solve_lp(self.rows, self.rhs, self.ncols, self.objective(), sec)
        return x, value, value2

    def dumps(self) -> str:
        """CPLEX-LP style listing; the objective is scaled by m."""
        sigma, inst = self.inst.sigma, self.inst

        def name(j):
            if j < self.nx:
                return f"x_{j // sigma}_{j % sigma}"
            i = max(r for r in range(inst.m) if self.zoff[r] <= j)
            k = len(inst.constraints[i].vars)
            b = next(itertools.islice(itertools.product(range(sigma), repeat=k), j - self.zoff[i], None))
            return f"z_{i}_{''.join(map(str, b))}"

        def expr(d):
            terms = []
            for j, a in sorted(d.items()):
                if a == 0:
                    continue
                sign = "-" if a < 0 else "+"
                mag = "" if abs(a) == 1 else f"{abs(a)} "
                terms.append(f"{sign} {mag}{name(j)}")
            return " ".join(terms).lstrip("+ ") or "0"

        lines = [f"\\ BasicLP, objective scaled by m = {inst.m}", "Maximize", f" obj: {expr(self.objective())}", "Subject To"]
        for r, (row, b) in enumerate(zip(self.rows, self.rhs)):
            lines.append(f" r{r}: {expr(row)} = {b}")
        lines.append("End")
        return "\n".join(lines) + "\n"

    def unpack(self, x) -> tuple:
        sigma, inst = self.inst.sigma, self.inst
        xs = {(v, s): _frac(x[v * sigma + s]) for v in range(inst.n) for s in range(sigma)}
        zs = {}
        for i, c in enumerate(inst.constraints):
            for bi, b in enumerate(itertools.product(range(sigma), repeat=len(c.vars))):
                zs[(i, b)] = _frac(x[self.zoff[i] + bi])
        return xs, zs


def solve_basic_lp(inst: Instance, dimension_cap=DEFAULT_DIMENSION_CAP) -> LpSolution:
    lp = BasicLP(inst, dimension_cap)
    x, value, _ = lp.solve()
    xs, zs = lp.unpack(x)
    return LpSolution(xs, zs, _frac(value) / inst.m)


def lp_center_value(inst: Instance, center: int, dimension_cap=DEFAULT_DIMENSION_CAP) -> Fraction:
    """Largest ``sum_b f(b) z[center, b]`` over optimal BasicLP solutions.

    Taking the maximum over the optimal face (rather than whatever vertex
    the solver lands on) makes the value independent of how the instance
    is labelled.
    """
    _, _, value2 = BasicLP(inst, dimension_cap).solve(secondary_center=center)
    return _frac(value2)


def check_lp_point(inst: Instance, x: dict, z: dict) -> list:
    """Exact feasibility check; returns a list of violated constraints (empty if feasible)."""
    sigma = inst.sigma
    bad = []
    for key, q in list(x.items()) + list(z.items()):
        if q < 0:
            bad.append(f"negative entry {key}")
    for v in range(inst.n):
        if sum(x.get((v, s), 0) for s in range(sigma)) != 1:
            bad.append(f"x[{v}] does not sum to 1")
    for i, c in enumerate(inst.constraints):
        tuples = list(itertools.product(range(sigma), repeat=len(c.vars)))
        if sum(z.get((i, b), 0) for b in tuples) != 1:
            bad.append(f"z[{i}] does not sum to 1")
        for j, v in enumerate(c.vars):
            for s in range(sigma):
                marg = sum(z.get((i, b), 0) for b in tuples if b[j] == s)
                if marg != x.get((v, s), 0):
                    bad.append(f"marginal ({i},{j},{s}) disagrees with x[{v},{s}]")
    return bad


def lp_objective(inst: Instance, z: dict) -> Fraction:
    total = Fraction(0)
    for i, c in enumerate(inst.constraints):
        pred = inst.predicate(i)
        for bi, b in enumerate(itertools.product(range(inst.sigma), repeat=len(c.vars))):
            if pred.table[bi]:
                total += z.get((i, b), 0)
    return total / inst.m


def integral_point(inst: Instance, tau) -> tuple:
    """The LP point of an integral assignment ``tau``."""
    x = {(v, s): Fraction(int(tau[v] == s)) for v in range(inst.n) for s in range(inst.sigma)}
    z = {}
    for i, c in enumerate(inst.constraints):
        mine = tuple(tau[v] for v in c.vars)
        for b in itertools.product(range(inst.sigma), repeat=len(c.vars)):
            z[(i, b)] = Fraction(int(b == mine))
    return x, z


def empirical_alpha(family, trials, n_max, *, sigma=None, seed=0, extra_instances=(), known=None):
    """Estimate the BasicLP integrality gap of a predicate family.

    ``family`` is an iterable of predicates.  The result is the smallest
    ``val / vallp`` over sampled small instances, which bounds the true
    infimum from above.  Passing ``known`` short-circuits to that value.
    """
    if known is not None:
        return IntegralityGapEstimate(Fraction(known), "known")
    if trials < 1:
        raise CSPError("need at least one trial")
    preds = list(family)
    if not preds:
        raise CSPError("empty predicate family")
    sigma = sigma or preds[0].sigma
    rng = random.Random(seed)
    best = Fraction(1)
    candidates = list(extra_instances)
    for _ in range(trials):
        k = max(p.arity for p in preds)
        n = rng.randint(k, max(k, n_max))
        m = rng.randint(1, 2 * n)
        cons = []
        for _ in range(m):
            p = rng.choice(preds)
            cons.append((tuple(rng.sample(range(n), p.arity)), p))
        candidates.append(Instance.build(n, sigma, cons))
    for inst in candidates:
        lpv = solve_basic_lp(inst).objective
        if lpv == 0:
            continue
        best = min(best, brute_force_val(inst) / lpv)
    return IntegralityGapEstimate(best, "empirical")


def always_true_family(arity=2, sigma=2):
    return [Predicate(arity, sigma, (1,) * sigma**arity)]
