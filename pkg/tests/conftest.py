from fractions import Fraction

import pytest

from cspstream.core import Constraint, Instance, Predicate, brute_force_val
from cspstream.local import a_loc_default

ACCEPTANCE = {}


def xor():
    return Predicate.from_function(2, 2, lambda a, b: a != b)


def dicut():
    return Predicate.from_function(2, 2, lambda a, b: a == 1 and b == 0)


def triangle():
    return Instance.build(3, 2, [((0, 1), xor()), ((1, 2), xor()), ((0, 2), xor())])


class MemoALoc:
    """Caches a local map by ball content; the map itself is unchanged."""

    def __init__(self, fn=a_loc_default):
        self.fn, self.cache = fn, {}

    def __call__(self, ball):
        key = (ball.center, tuple(ball.cons.items()), frozenset(ball.tiers.items()))
        if key not in self.cache:
            self.cache[key] = self.fn(ball)
        return self.cache[key]


class CanonicalMemo(MemoALoc):
    """Caches by the relabelled serialization, shared across instances."""

    def __call__(self, ball):
        inst, center, _ = ball.to_instance()
        key = (inst.dumps(), center, ball.center_dummy)
        if key not in self.cache:
            self.cache[key] = self.fn(ball)
        return self.cache[key]


def reduced_val(R) -> Fraction:
    """Brute-force value of a reduced instance over its variable copies."""
    ci = R.copy_instance()
    copies = sorted(ci.copies())
    idx = {c: a for a, c in enumerate(copies)}
    cons = [Constraint(tuple(idx[c] for c in cps), p) for _, (p, cps) in sorted(ci.cons.items())]
    return brute_force_val(Instance(len(copies), cons, R.base.sigma, R.base.registry))


@pytest.fixture
def record_acceptance():
    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
