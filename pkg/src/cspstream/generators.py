"""Random instance families."""

from __future__ import annotations

import numpy as np

from .core import CSPError, Instance, Predicate

FAMILIES = ("maxcut", "maxdicut", "ksat", "random")
MAX_ATTEMPTS = 1000


def xor_predicate() -> Predicate:
    return Predicate.from_function(2, 2, lambda a, b: a != b)


def dicut_predicate() -> Predicate:
    return Predicate.from_function(2, 2, lambda a, b: a == 1 and b == 0)


def clause_predicate(negated) -> Predicate:
    """Disjunction of literals; ``negated[t]`` flips position t."""
    neg = tuple(bool(x) for x in negated)
    return Predicate.from_function(len(neg), 2, lambda *xs: any(x != n for x, n in zip(xs, neg)))


def _check(family, k, sigma):
    if family in ("maxcut", "maxdicut") and (k != 2 or sigma != 2):
        raise CSPError(f"{family} needs k=2 and sigma=2")
    if family == "ksat" and sigma != 2:
        raise CSPError("ksat needs sigma=2")
    if family not in FAMILIES:
        raise CSPError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")


def _random_table(rng, k, sigma) -> Predicate:
    while True:
        table = tuple(int(b) for b in rng.integers(0, 2, sigma**k))
        pred = Predicate(k, sigma, table)
        if not pred.trivial:
            return pred


def family_predicates(family: str, k: int = 2, sigma: int = 2) -> list:
    """The predicates a family draws from (random tables excluded)."""
    if family == "maxcut":
        return [xor_predicate()]
    if family == "maxdicut":
        return [dicut_predicate()]
    if family == "ksat":
        return [clause_predicate([(b >> t) & 1 for t in range(k)]) for b in range(2**k)]
    raise CSPError(f"family {family!r} has no fixed predicate list")


def generate(family, n, m, k=2, sigma=2, seed=0, allow_isolated=False) -> Instance:
    """Random instance; each constraint uses ``k`` distinct variables.

    Unless ``allow_isolated`` is set, draws are repeated until every
    variable appears in some constraint.
    """
    if family == "random-table":
        family = "random"
    _check(family, k, sigma)
    if n < k:
        raise CSPError("need n >= k for distinct variables")
    if m < 0:
        raise CSPError("negative m")
    if not allow_isolated and m * k < n:
        raise CSPError(f"m*k={m * k} < n={n}: isolated variables unavoidable")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_ATTEMPTS):
        V = np.argsort(rng.random((m, n)), axis=1)[:, :k] if n <= 64 else _distinct_rows(rng, n, m, k)
        if allow_isolated or len(np.unique(V)) == n:
            break
    else:
        raise CSPError("could not avoid isolated variables; raise m or pass allow_isolated")
    if family == "maxcut":
        preds = [xor_predicate()] * m
    elif family == "maxdicut":
        preds = [dicut_predicate()] * m
    elif family == "ksat":
        pool = family_predicates("ksat", k)
        preds = [pool[int(b)] for b in rng.integers(0, len(pool), m)]
    else:
        preds = [_random_table(rng, k, sigma) for _ in range(m)]
    return Instance.build(n, sigma, [(tuple(int(x) for x in row), p) for row, p in zip(V, preds)])


def _distinct_rows(rng, n, m, k):
    """``m`` rows of ``k`` distinct values in ``range(n)`` by rejection."""
    V = rng.integers(0, n, (m, k))
    while True:
        bad = np.zeros(m, dtype=bool)
        for a in range(k):
            for b in range(a + 1, k):
                bad |= V[:, a] == V[:, b]
        if not bad.any():
            return V
        V[bad] = rng.integers(0, n, (int(bad.sum()), k))
