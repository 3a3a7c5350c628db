"""Acceptance criteria 1-10, one recorded pass/fail line each.

Every test records its line before asserting, so a failure still prints
the measured numbers.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chisquare

from cspstream.core import Instance, Predicate, brute_force_val
from cspstream.experiments import space_curve
from cspstream.generators import generate, xor_predicate
from cspstream.local import ParentValueOracle, ball_is_fully_sampled, count_dependencies, extract_ball
from cspstream.lp import solve_basic_lp
from cspstream.reduction import (
    EstimatorConfig,
    ReducedInstance,
    aggregate,
    bound_degree,
    choose_degrees,
    induced_sample,
    local_average,
    make_hash,
    offline_estimate,
    offline_sample,
    sample_cset,
    trevisan_reduce,
    wire_copies,
)
from cspstream.reservoir import Reservoir
from cspstream.streaming import coupled_run, instance_stream, sketch_stream, streaming_estimate
from cspstream.tape import RandomTape
from conftest import CanonicalMemo, MemoALoc, reduced_val


def test_01_relaxation_soundness(record_acceptance):
    rng = np.random.default_rng(1)
    start, bad = time.perf_counter(), 0
    for seed in range(500):
        sigma, k = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        n = int(rng.integers(max(k, 2), 11))
        if sigma == 3:
            n = min(n, 8)
        m = int(rng.integers(1, 9))
        inst = generate("random", n, m, k=k, sigma=sigma, seed=seed, allow_isolated=True)
        bad += not brute_force_val(inst) <= solve_basic_lp(inst).objective
    elapsed = time.perf_counter() - start
    ok = bad == 0 and elapsed < 300
    record_acceptance(1, ok, f"val <= LP on {500 - bad}/500 instances, {elapsed:.0f}s")
    assert ok


def test_02_reduction_sandwich(record_acceptance):
    plan = [("maxcut", 6, 6, 2), ("maxdicut", 6, 6, 2), ("random", 6, 6, 2), ("ksat", 5, 5, 2)]
    lower = upper = 0
    start = time.perf_counter()
    for seed in range(200):
        family, n, m, k = plan[seed % len(plan)]
        inst = generate(family, n, m, k=k, seed=seed)
        R = trevisan_reduce(inst, 8, "exact", RandomTape(seed))
        v, vr = brute_force_val(inst), reduced_val(R)
        lower += v <= vr
        upper += vr <= Fraction(3, 2) * v
    elapsed = time.perf_counter() - start
    ok = lower == 200 and upper >= 190 and elapsed < 600
    record_acceptance(2, ok, f"lower {lower}/200, upper {upper}/200 (need 190), {elapsed:.0f}s")
    assert ok


def test_03_degree_excess(record_acceptance):
    eps, B, good, worst = 0.5, 8, 0, 0
    for seed in range(200):
        inst = generate(("maxcut", "maxdicut", "random")[seed % 3], 200, 800, seed=seed)
        P = EstimatorConfig(epsilon=eps, B=B).resolve(inst.n, 2, 2, inst.m)
        R = trevisan_reduce(inst, B, "exact", RandomTape(seed))
        Rb, _ = bound_degree(R, P.cap)
        replaced = int(Rb.dummy.sum())
        worst = max(worst, replaced)
        good += replaced <= eps * inst.m * B
    ok = good >= 190
    record_acceptance(3, ok, f"{good}/200 within eps*mB (cap {P.cap}, most replaced {worst})")
    assert ok


ESTIMATOR_CASES = [
    ("maxcut", 10, 7, 0, 1.2, 1),
    ("maxdicut", 6, 7, 0, 1.0, 2),
    ("random", 5, 6, 1, 1.4, 3),
    ("maxcut", 6, 6, 1, 2.0, 4),
    ("ksat", 6, 7, 0, 0.8, 5),
]


def fixed_reduction(family, n, m, r, q, seed):
    inst = generate(family, n, m, seed=seed, allow_isolated=True)
    P = EstimatorConfig(epsilon=0.5, B=8, r=r, hash_range=2, q_exp=q, cset_size=8).resolve(n, 2, 2, m)
    tape = RandomTape(10**6 + seed)
    choice = choose_degrees(inst, P, "exact", tape)
    wiring, _ = wire_copies(inst, P.B, choice.dtilde, None, tape, None)
    return P, ReducedInstance(inst, P.B, choice.dtilde, choice.high, wiring)


def test_04_unbiasedness(record_acceptance):
    N = 10**4
    details, ok = [], True
    for case in ESTIMATOR_CASES:
        P, R = fixed_reduction(*case)
        assert R.n_copies <= 60 and R.base.m * R.B <= 60
        memo = MemoALoc()
        truth = float(local_average(bound_degree(R, P.cap)[0], P.r, memo))
        outs = np.empty(N)
        for seed in range(N):
            tape = RandomTape(seed)
            mask = offline_sample(R, P, make_hash(P, tape), tape)
            outs[seed] = float(aggregate(induced_sample(R, mask), sample_cset(P, tape), P, memo).out)
        z = (outs.mean() - truth) / (outs.std(ddof=1) / math.sqrt(N))
        ok &= abs(z) <= 3
        details.append(f"z={z:+.2f}(high={int(R.high.sum())})")
    record_acceptance(4, ok, "5 instances: " + " ".join(details))
    assert ok


def _hand_ball(name):
    """Small reduced instances with a known dependency count at the center."""
    unary = Predicate(1, 2, (0, 1))
    tern = Predicate.from_function(3, 2, lambda a, b, c: (a + b + c) % 2 == 1)
    x = xor_predicate()
    cases = {
        "unary-low": ([((0,), unary)], [1], [], [[[1]]], 0, 1),
        "unary-high": ([((0,), unary)], [1], [0], [[[1]]], 0, 1),
        "low-low": ([((0, 1), x)], [1, 1], [], [[[1, 1]]], 0, 2),
        "low-high": ([((0, 1), x)], [1, 1], [1], [[[1, 1]]], 0, 2),
        "high-high": ([((0, 1), x)], [1, 1], [0, 1], [[[1, 1]]], 0, 2),
        "ternary-low": ([((0, 1, 2), tern)], [1, 1, 1], [], [[[1, 1, 1]]], 0, 3),
        "ternary-mixed": ([((0, 1, 2), tern)], [1, 1, 1], [0, 2], [[[1, 1, 1]]], 0, 3),
        "path-low": ([((0, 1), x), ((1, 2), x)], [1, 2, 1], [], [[[1, 1]], [[1, 1]]], 1, 3),
        "path-high-middle": ([((0, 1), x), ((1, 2), x)], [1, 2, 1], [1], [[[1, 2]], [[2, 1]]], 1, 3),
        "shared-parent": (
            [((0, 1), x), ((1, 2), x), ((2, 0), x)],
            [2, 2, 2],
            [],
            [[[1, 1]], [[1, 1]], [[1, 2]]],
            2,
            3,
        ),
    }
    cons, dtilde, high, wiring, r, T = cases[name]
    k = len(cons[0][0])
    n = max(v for vs, _ in cons for v in vs) + 1
    inst = Instance.build(n, 2, cons)
    mask = np.zeros(n, dtype=bool)
    mask[high] = True
    R = ReducedInstance(inst, 1, np.array(dtilde), mask, np.array(wiring).reshape(len(cons), 1, k))
    return R, r, T


BALLS = [
    ("unary-low", 2),
    ("unary-high", 4),
    ("low-low", 2),
    ("low-high", 4),
    ("high-high", 2),
    ("ternary-low", 4),
    ("ternary-mixed", 2),
    ("path-low", 4),
    ("path-high-middle", 2),
    ("shared-parent", 4),
]


def test_05_success_probability(record_acceptance):
    N = 10**4
    details, ok = [], True
    for name, nc in BALLS:
        R, r, T = _hand_ball(name)
        ci = R.copy_instance()
        assert count_dependencies(extract_ball(ci, (0, 0), r)) == T, name
        P = EstimatorConfig(B=1, r=r, hash_range=nc, T_max=4).resolve(max(R.base.n, 2), R.base.k, 2, R.base.m)
        hits = 0
        for seed in range(N):
            tape = RandomTape(seed)
            sample = induced_sample(R, offline_sample(R, P, make_hash(P, tape), tape))
            hits += ball_is_fully_sampled(sample, (0, 0), r, sample.degs)
        p = nc ** (-T)
        z = (hits / N - p) / math.sqrt(p * (1 - p) / N)
        ok &= abs(z) <= 3
        details.append(f"{name}(T={T},1/{nc}):z={z:+.2f}")
    record_acceptance(5, ok, " ".join(details))
    assert ok


def test_06_coupling(record_acceptance):
    delta, runs = 0.05, 1000
    cfg = EstimatorConfig(epsilon=0.5, delta=delta, r=0, hash_range=2, q_exp=0.75, alpha=0.5)
    matched = clean = clean_matched = nonzero = 0
    for seed in range(runs):
        inst = generate("maxdicut", 256, 1024, seed=seed)
        res = coupled_run(inst, cfg, seed)
        matched += res.matched
        nonzero += res.off != 0
        if not res.claim_failure:
            clean += 1
            clean_matched += res.matched
    rate = matched / runs
    ok = rate >= 1 - 3 * delta and clean_matched == clean
    record_acceptance(
        6, ok, f"matched {matched}/{runs}, clean runs matched {clean_matched}/{clean}, nonzero Out in {nonzero}"
    )
    assert ok


def test_07_reservoir_uniformity(record_acceptance):
    s, N, seeds = 10, 200, 10**4
    counts = np.zeros(N)
    for seed in range(seeds):
        res = Reservoir(s)
        res.extend(range(N), RandomTape(seed))
        counts[res.slots] += 1
    stat, pvalue = chisquare(counts)
    ok = pvalue > 0.001
    record_acceptance(7, ok, f"chi2={stat:.1f} on {N - 1} df, p={pvalue:.3f}")
    assert ok


def test_08_space_sublinear(record_acceptance):
    grid = [2**e for e in range(10, 17)]
    start = time.perf_counter()
    details, ok = [], True
    for c in (0.5, 0.25):
        curve = space_curve(grid, EstimatorConfig(B=2, c_exp=c), m_factor=4, seed=0)
        ok &= curve.slope <= 1 - c / 6
        details.append(f"c={c}: slope {curve.slope:.3f} (limit {1 - c / 6:.3f})")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1800
    record_acceptance(8, ok, "; ".join(details) + f", {elapsed:.0f}s")
    assert ok


def test_09_dicut_end_to_end(record_acceptance):
    eps, delta, alpha = Fraction(1, 50), 0.05, Fraction(1, 2)
    cfg = EstimatorConfig(epsilon=float(eps), delta=delta, B=4, r=10**6, c_exp=0, cset="all", alpha=float(alpha))
    oracle = ParentValueOracle()
    good, ratios = 0, []
    for seed in range(100):
        inst = generate("maxdicut", 10, 40, seed=seed)
        val = brute_force_val(inst)
        res = offline_estimate(inst, cfg, RandomTape(seed), a_loc=oracle)
        low = (alpha - 4 * eps * 4) * val
        good += float(low) <= res.vtilde <= float(val)
        ratios.append(res.vtilde / float(val))
    ok = good >= 100 * (1 - 6 * delta)
    record_acceptance(9, ok, f"{good}/100 in band (need {math.ceil(100 * (1 - 6 * delta))}), ratio {min(ratios):.3f}..{max(ratios):.3f}")
    assert ok


def test_10_order_invariance(record_acceptance):
    memo = CanonicalMemo()
    sketches_ok = estimates_ok = 0
    for idx in range(50):
        inst = generate(("maxcut", "maxdicut", "random")[idx % 3], 12, 24, seed=idx)
        sketch_cfg = EstimatorConfig(B=3, hash_range=2, r=1)
        full_cfg = sketch_cfg.replace(cset="all", alpha=0.5)
        P = sketch_cfg.resolve(inst.n, 2, 2, inst.m)
        perms = [None] + [np.random.default_rng(1000 * idx + j).permutation(inst.m) for j in range(5)]
        comps, outs = [], []
        for order in perms:
            comps.append(sketch_stream(instance_stream(inst, order), inst.n, P, RandomTape(idx)).components())
            res = streaming_estimate(
                instance_stream(inst, order), inst.n, full_cfg, k=2, sigma=2,
                registry=inst.registry, m=inst.m, tape=RandomTape(idx), a_loc=memo,
            )
            outs.append(res.out)
        sketches_ok += all(c == comps[0] for c in comps)
        estimates_ok += all(o == outs[0] for o in outs)
    ok = sketches_ok == 50 and estimates_ok == 50
    record_acceptance(10, ok, f"sketches identical {sketches_ok}/50, estimates identical {estimates_ok}/50")
    assert ok
