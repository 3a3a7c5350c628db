import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cspstream.core import Instance, Predicate, brute_force_opt, brute_force_val, evaluate, false_predicate
from cspstream.generators import dicut_predicate, generate, xor_predicate
from cspstream.lp import (
    KNOWN_ALPHA,
    BasicLP,
    IntegralityGapEstimate,
    LPTooLarge,
    always_true_family,
    check_lp_point,
    empirical_alpha,
    integral_point,
    lp_center_value,
    lp_objective,
    solve_basic_lp,
)
from conftest import triangle
from test_core import instances


def test_single_xor_is_one():
    sol = solve_basic_lp(Instance.build(2, 2, [((0, 1), xor_predicate())]))
    assert sol.objective == 1
    assert sol.z[(0, (0, 0))] == 0 and sol.z[(0, (1, 1))] == 0


def test_triangle_gap():
    inst = triangle()
    assert solve_basic_lp(inst).objective == 1
    assert brute_force_val(inst) == Fraction(2, 3)


def test_all_false_zero():
    inst = Instance.build(2, 2, [((0, 1), false_predicate(2, 2))] * 2)
    assert solve_basic_lp(inst).objective == 0


def test_dicut_triangle():
    inst = Instance.build(3, 2, [((0, 1), dicut_predicate()), ((1, 2), dicut_predicate()), ((2, 0), dicut_predicate())])
    assert solve_basic_lp(inst).objective == Fraction(1, 2)
    assert brute_force_val(inst) == Fraction(1, 3)


def test_dimension_cap():
    with pytest.raises(LPTooLarge):
        solve_basic_lp(triangle(), dimension_cap=10)


def test_solution_json_renders_rationals():
    data = json.loads(solve_basic_lp(triangle()).to_json())
    assert data["objective"] == "1"
    assert all("/" in v or v in ("0", "1") for v in data["x"].values())


def test_lp_listing():
    text = BasicLP(triangle()).dumps()
    assert text.startswith("\\ BasicLP")
    assert "Maximize" in text and "Subject To" in text and text.rstrip().endswith("End")
    assert " r0: x_0_0 + x_0_1 = 1" in text


def test_repeated_variable_rows():
    # marginal rows are per position, so XOR(v, v) still relaxes to 1
    inst = Instance.build(1, 2, [((0, 0), xor_predicate())])
    lp = BasicLP(inst)
    assert len(lp.rows) == 1 + 2 * 2
    assert solve_basic_lp(inst).objective == 1
    assert brute_force_val(inst) == 0


def test_center_value_triangle():
    assert lp_center_value(triangle(), 0) == 1


@given(instances(n_max=4, m_max=5))
@settings(max_examples=40, deadline=None)
def test_relaxation_and_feasibility(inst):
    sol = solve_basic_lp(inst)
    assert check_lp_point(inst, sol.x, sol.z) == []
    assert lp_objective(inst, sol.z) == sol.objective
    assert brute_force_val(inst) <= sol.objective <= 1


@given(instances(n_max=4, m_max=5), st.data())
@settings(max_examples=40, deadline=None)
def test_integral_points_embed(inst, data):
    tau = data.draw(st.lists(st.integers(0, inst.sigma - 1), min_size=inst.n, max_size=inst.n))
    x, z = integral_point(inst, tau)
    assert check_lp_point(inst, x, z) == []
    assert lp_objective(inst, z) == evaluate(inst, tau)


def test_check_detects_violation():
    inst = triangle()
    x, z = integral_point(inst, (0, 1, 0))
    x[(0, 0)] = Fraction(1, 2)
    assert check_lp_point(inst, x, z)


class TestAlpha:
    def test_known_dicut(self):
        est = empirical_alpha([dicut_predicate()], 1, 4, known=KNOWN_ALPHA["maxdicut"])
        assert est.alpha == Fraction(1, 2) and est.provenance == "known"

    def test_always_true(self):
        assert empirical_alpha(always_true_family(), 10, 5).alpha == 1

    def test_maxcut_with_triangle(self):
        est = empirical_alpha([xor_predicate()], 5, 5, extra_instances=[triangle()])
        assert est.alpha <= Fraction(2, 3) and est.provenance == "empirical"

    def test_range(self):
        with pytest.raises(ValueError):
            IntegralityGapEstimate(Fraction(3, 2), "known")


def test_random_ternary_instances():
    for seed in range(10):
        inst = generate("random", 6, 5, k=3, sigma=3, seed=seed)
        sol = solve_basic_lp(inst)
        assert check_lp_point(inst, sol.x, sol.z) == []
        val, _ = brute_force_opt(inst)
        assert val <= sol.objective
