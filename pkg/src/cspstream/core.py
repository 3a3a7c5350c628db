"""Max-CSP instances, exact evaluation, and input simplifications.

Variables are ``0..n-1`` and alphabet symbols ``0..sigma-1``.  Predicates
are dense truth tables in lexicographic tuple order (last coordinate
varies fastest).  Values of assignments are exact ``Fraction``s.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .tape import RandomTape

ENUMERATION_LIMIT = 10**7


class CSPError(ValueError):
    """Malformed instance or an operation outside its preconditions."""


@dataclass(frozen=True)
class Predicate:
    arity: int
    sigma: int
    table: tuple

    def __post_init__(self):
        if self.arity < 1 or self.sigma < 2:
            raise CSPError("predicate needs arity >= 1 and sigma >= 2")
        if len(self.table) != self.sigma**self.arity:
            raise CSPError(
                f"table has {len(self.table)} entries, expected {self.sigma ** self.arity}"
            )
        object.__setattr__(self, "table", tuple(1 if b else 0 for b in self.table))

    @classmethod
    def from_function(cls, arity, sigma, fn):
        tuples = itertools.product(range(sigma), repeat=arity)
        return cls(arity, sigma, tuple(int(bool(fn(*b))) for b in tuples))

    @property
    def trivially_true(self) -> bool:
        return all(self.table)

    @property
    def trivially_false(self) -> bool:
        return not any(self.table)

    @property
    def trivial(self) -> bool:
        return self.trivially_true or self.trivially_false

    def index(self, values: Sequence[int]) -> int:
        idx = 0
        for b in values:
            idx = idx * self.sigma + b
        return idx

    def __call__(self, *values) -> int:
        return self.table[self.index(values)]

    def bitstring(self) -> str:
        return "".join(map(str, self.table))

    def as_array(self) -> np.ndarray:
        return np.array(self.table, dtype=np.int8)


def false_predicate(arity, sigma) -> Predicate:
    return Predicate(arity, sigma, (0,) * sigma**arity)


class PredicateRegistry:
    """Deduplicating store of predicates; ids are list positions."""

    def __init__(self, predicates: Iterable[Predicate] = ()):
        self._preds: list[Predicate] = []
        self._ids: dict[Predicate, int] = {}
        for p in predicates:
            self.add(p)

    def add(self, pred: Predicate) -> int:
        pid = self._ids.get(pred)
        if pid is None:
            pid = len(self._preds)
            self._preds.append(pred)
            self._ids[pred] = pid
        return pid

    def __getitem__(self, pid: int) -> Predicate:
        return self._preds[pid]

    def __len__(self):
        return len(self._preds)

    def __iter__(self):
        return iter(self._preds)

    def copy(self) -> "PredicateRegistry":
        return PredicateRegistry(self._preds)


@dataclass(frozen=True)
class Constraint:
    vars: tuple
    pred: int

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(int(v) for v in self.vars))


@dataclass
class Instance:
    n: int
    constraints: list
    sigma: int
    registry: PredicateRegistry = field(default_factory=PredicateRegistry)

    def __post_init__(self):
        if self.n < 0:
            raise CSPError("negative variable count")
        if self.sigma < 2:
            raise CSPError("alphabet needs at least two symbols")
        for c in self.constraints:
            pred = self.registry[c.pred]
            if len(c.vars) != pred.arity:
                raise CSPError(f"constraint {c} does not match predicate arity {pred.arity}")
            if pred.sigma != self.sigma:
                raise CSPError("predicate alphabet differs from instance alphabet")
            for v in c.vars:
                if not 0 <= v < self.n:
                    raise CSPError(f"variable {v} out of range for n={self.n}")

    @classmethod
    def build(cls, n, sigma, constraints):
        """Build from ``[(vars, Predicate), ...]``."""
        reg = PredicateRegistry()
        cons = [Constraint(tuple(vs), reg.add(p)) for vs, p in constraints]
        return cls(n, cons, sigma, reg)

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def k(self) -> int:
        return max((len(c.vars) for c in self.constraints), default=0)

    def predicate(self, i: int) -> Predicate:
        return self.registry[self.constraints[i].pred]

    def with_constraints(self, constraints) -> "Instance":
        return Instance(self.n, list(constraints), self.sigma, self.registry)

    def structure(self):
        """Registry-independent description, for equality checks."""
        return (
            self.n,
            self.sigma,
            tuple((c.vars, self.registry[c.pred].table) for c in self.constraints),
        )

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return self.structure() == other.structure()

    def var_array(self) -> np.ndarray:
        """``(m, k)`` array of variable indices; requires uniform arity."""
        k = self.k
        if any(len(c.vars) != k for c in self.constraints):
            raise CSPError("mixed arities; pad_arity first")
        return np.array([c.vars for c in self.constraints], dtype=np.int64).reshape(self.m, k)

    # text format -------------------------------------------------------

    def dumps(self) -> str:
        order: dict[int, int] = {}
        for c in self.constraints:
            order.setdefault(c.pred, len(order))
        out = io.StringIO()
        out.write(f"csp {self.n} {self.m} {self.sigma} {self.k}\n")
        for pid, new in order.items():
            out.write(f"pred {new} {self.registry[pid].bitstring()}\n")
        for c in self.constraints:
            out.write(" ".join(["c", str(order[c.pred])] + [str(v) for v in c.vars]) + "\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "Instance":
        lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or lines[0][0] != "csp" or len(lines[0]) != 5:
            raise CSPError("missing header 'csp <n> <m> <sigma> <k>'")
        n, m, sigma, _k = map(int, lines[0][1:])
        reg = PredicateRegistry()
        pred_map: dict[int, int] = {}
        cons = []
        for parts in lines[1:]:
            if parts[0] == "pred":
                bits = parts[2]
                arity = round(np.log(len(bits)) / np.log(sigma))
                pred = Predicate(arity, sigma, tuple(int(b) for b in bits))
                pred_map[int(parts[1])] = reg.add(pred)
            elif parts[0] == "c":
                pid = pred_map.get(int(parts[1]))
                if pid is None:
                    raise CSPError(f"constraint references undefined predicate {parts[1]}")
                cons.append(Constraint(tuple(int(v) for v in parts[2:]), pid))
            else:
                raise CSPError(f"unknown line type {parts[0]!r}")
        if len(cons) != m:
            raise CSPError(f"header declares {m} constraints, found {len(cons)}")
        return cls(n, cons, sigma, reg)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Instance":
        with open(path) as fh:
            return cls.loads(fh.read())


def evaluate(inst: Instance, tau: Sequence[int]) -> Fraction:
    """Fraction of constraints satisfied by ``tau``."""
    if len(tau) != inst.n:
        raise CSPError(f"assignment has length {len(tau)}, instance has n={inst.n}")
    if inst.m == 0:
        raise CSPError("value of an empty instance is undefined")
    if any(not 0 <= t < inst.sigma for t in tau):
        raise CSPError("assignment symbol outside the alphabet")
    sat = sum(inst.registry[c.pred](*(tau[v] for v in c.vars)) for c in inst.constraints)
    return Fraction(sat, inst.m)


def _satisfied_counts(n, sigma, cons_vars, cons_tables, weights, start, stop):
    """Weighted satisfied count for assignment indices ``start..stop-1``.

    Assignment index ``a`` gives variable ``v`` the digit
    ``a // sigma**(n-1-v) % sigma`` (variable 0 most significant).
    """
    a = np.arange(start, stop, dtype=np.int64)
    total = np.zeros(len(a), dtype=np.int64)
    digit_cache: dict[int, np.ndarray] = {}

    def digits(v):
        d = digit_cache.get(v)
        if d is None:
            d = (a // sigma ** (n - 1 - v)) % sigma
            digit_cache[v] = d
        return d

    for vs, table, w in zip(cons_vars, cons_tables, weights):
        idx = np.zeros(len(a), dtype=np.int64)
        for v in vs:
            idx = idx * sigma + digits(v)
        total += table[idx].astype(np.int64) * w
    return total


def best_assignment(n, sigma, cons_vars, cons_tables, weights=None, chunk=1 << 16):
    """Exhaustive search; returns ``(best weighted count, lexicographically first argmax)``."""
    if sigma**n > ENUMERATION_LIMIT:
        raise CSPError(f"{sigma}^{n} assignments exceed the enumeration limit")
    if weights is None:
        weights = [1] * len(cons_vars)
    tables = [np.asarray(t, dtype=np.int8) for t in cons_tables]
    best, arg = -1, 0
    total = sigma**n
    for start in range(0, total, chunk):
        counts = _satisfied_counts(n, sigma, cons_vars, tables, weights, start, min(total, start + chunk))
        i = int(np.argmax(counts))
        if counts[i] > best:
            best, arg = int(counts[i]), start + i
    tau = [(arg // sigma ** (n - 1 - v)) % sigma for v in range(n)]
    return best, tau


def brute_force_opt(inst: Instance):
    """``(val(I), optimal assignment)`` by enumeration of all sigma^n assignments."""
    if inst.m == 0:
        raise CSPError("value of an empty instance is undefined")
    cons_vars = [c.vars for c in inst.constraints]
    tables = [inst.registry[c.pred].table for c in inst.constraints]
    best, tau = best_assignment(inst.n, inst.sigma, cons_vars, tables)
    return Fraction(best, inst.m), tau


def brute_force_val(inst: Instance) -> Fraction:
    return brute_force_opt(inst)[0]


def pad_arity(inst: Instance, k: int) -> Instance:
    """Pad every constraint to arity ``k`` with ignored dummy variables.

    Dummies are shared across constraints and appended after the real
    variables, so real-variable degrees are unchanged.
    """
    arities = [len(c.vars) for c in inst.constraints]
    if any(a > k for a in arities):
        raise CSPError(f"constraint arity exceeds k={k}")
    if all(a == k for a in arities):
        return inst
    n_dummy = k - min(arities)
    reg = inst.registry.copy()
    cons = []
    for c in inst.constraints:
        pred = inst.registry[c.pred]
        extra = k - pred.arity
        if extra == 0:
            cons.append(c)
            continue
        table = tuple(t for t in pred.table for _ in range(inst.sigma**extra))
        pid = reg.add(Predicate(k, inst.sigma, table))
        dummies = tuple(inst.n + d for d in range(extra))
        cons.append(Constraint(c.vars + dummies, pid))
    return Instance(inst.n + n_dummy, cons, inst.sigma, reg)


def split_trivial(inst: Instance):
    """Return ``(I0, mT, mF)``: nontrivial constraints plus trivial counts."""
    keep, m_true, m_false = [], 0, 0
    for c in inst.constraints:
        pred = inst.registry[c.pred]
        if pred.trivially_true:
            m_true += 1
        elif pred.trivially_false:
            m_false += 1
        else:
            keep.append(c)
    return inst.with_constraints(keep), m_true, m_false


def recombine_estimate(vhat, m0: int, m_true: int, m_false: int):
    """``(m0 * vhat + mT) / m`` for an estimate ``vhat`` on the nontrivial part."""
    total = m0 + m_true + m_false
    if min(m0, m_true, m_false) < 0:
        raise CSPError("negative constraint count")
    if total == 0:
        raise CSPError("no constraints at all")
    return (m0 * vhat + m_true) / total


def subsample_constraints(inst: Instance, p: float, tape: RandomTape) -> Instance:
    """Keep each constraint independently with probability ``p`` (keyed by index)."""
    if not 0 < p <= 1:
        raise CSPError("sampling probability must lie in (0, 1]")
    if inst.m == 0:
        return inst.with_constraints([])
    keep = tape.uniform("subsample", np.arange(inst.m)) < p
    return inst.with_constraints([c for c, k in zip(inst.constraints, keep) if k])


def degree(inst: Instance, v: int) -> int:
    """Number of constraints adjacent to ``v``; a repeated variable counts once."""
    if not 0 <= v < inst.n:
        raise CSPError(f"variable {v} out of range")
    return sum(1 for c in inst.constraints if v in c.vars)


def degrees(inst: Instance) -> np.ndarray:
    deg = np.zeros(inst.n, dtype=np.int64)
    for c in inst.constraints:
        for v in set(c.vars):
            deg[v] += 1
    return deg
