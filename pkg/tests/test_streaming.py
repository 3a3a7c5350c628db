import math

import numpy as np
import pytest

from cspstream.core import CSPError, Instance, false_predicate
from cspstream.generators import generate, xor_predicate
from cspstream.reduction import EstimatorConfig, make_hash
from cspstream.streaming import (
    SPACE_CAP_ENV,
    Sketch,
    SpaceCapExceeded,
    StreamTerminated,
    coupled_run,
    guess_index,
    instance_stream,
    m_guess_wrapper,
    sketch_stream,
    space_cap,
    streaming_estimate,
    streaming_reduction,
)
from cspstream.reservoir import Reservoir
from cspstream.tape import RandomTape
from conftest import CanonicalMemo


def run_estimate(inst, cfg, seed=0, m="known", **kw):
    return streaming_estimate(
        instance_stream(inst),
        inst.n,
        cfg,
        k=inst.k,
        sigma=inst.sigma,
        registry=inst.registry,
        m=inst.m if m == "known" else m,
        tape=RandomTape(seed),
        **kw,
    )


class TestSketch:
    def test_nothing_hashed(self):
        inst = generate("maxcut", 20, 30, seed=0)
        P = EstimatorConfig(B=2, hash_range=10**9).resolve(20, 2, 2, 30)
        sk = sketch_stream(instance_stream(inst), 20, P, RandomTape(1))
        assert not sk.S and not sk.F and not sk.degs
        assert sk.count == 30

    def test_everything_hashed(self):
        inst = generate("maxdicut", 12, 30, seed=1)
        P = EstimatorConfig(B=3, c_exp=0).resolve(12, 2, 2, 30)
        sk = sketch_stream(instance_stream(inst), 12, P, RandomTape(2))
        from cspstream.core import degrees

        deg = degrees(inst)
        assert sk.S == set(range(12))
        assert sk.degs == {v: 3 * int(deg[v]) for v in range(12)}
        assert len(sk.F) == 30 * 3

    def test_expected_f_size(self):
        inst = generate("maxcut", 64, 256, seed=2)
        P = EstimatorConfig(B=4, hash_range=8).resolve(64, 2, 2, 256)
        sizes = [len(sketch_stream(instance_stream(inst), 64, P, RandomTape(s)).F) for s in range(40)]
        assert np.mean(sizes) <= 3 * 2 * 256 * 4 / 8

    def test_cset_decoding(self):
        sk = Sketch(3, 4, 2, reservoir=Reservoir(3))
        sk.reservoir.slots = [9, 0, 6]
        assert sk.cset() == [(0, 0), (1, 2), (2, 1)]

    def test_arity_mismatch(self):
        inst = generate("ksat", 8, 10, k=3, seed=0)
        P = EstimatorConfig(B=2).resolve(8, 2, 2, 10)
        with pytest.raises(CSPError):
            sketch_stream(instance_stream(inst), 8, P, RandomTape(0))


class TestSpaceCap:
    def test_explicit_cap(self):
        inst = generate("maxcut", 20, 40, seed=0)
        P = EstimatorConfig(B=4, c_exp=0).resolve(20, 2, 2, 40)
        with pytest.raises(SpaceCapExceeded) as info:
            sketch_stream(instance_stream(inst), 20, P, RandomTape(0), cap=5)
        assert info.value.used > 5

    def test_env_override(self, monkeypatch):
        P = EstimatorConfig(B=4).resolve(20, 2, 2, 40)
        assert space_cap(P) == P.space_cap
        monkeypatch.setenv(SPACE_CAP_ENV, "7")
        assert space_cap(P) == 7
        res = coupled_run(generate("maxcut", 20, 40, seed=0), EstimatorConfig(B=4, c_exp=0, alpha=0.5), 0)
        assert res.diagnostics["claims"]["space-cap"] is False and res.on is None


def star(leaves):
    return Instance.build(leaves + 1, 2, [((0, v), xor_predicate()) for v in range(1, leaves + 1)])


class TestStreamingReduction:
    def test_empty_high_sample_drops_copies(self):
        inst = star(3)
        P = EstimatorConfig(B=2, hash_range=1000, q_exp=0.01).resolve(4, 2, 2, 3)
        for seed in range(200):
            sk = Sketch(4, 2, 2, reservoir=Reservoir(1))
            sk.F = {(0, 0): (0, (0, 1)), (0, 1): (0, (0, 1))}
            sk.G = {(0, 0, 0): 0, (0, 1, 0): 0}
            sk.Gt = {(i, 0, 0): 0 for i in range(5)}
            red = streaming_reduction(sk, P, RandomTape(seed), inst.registry, 2)
            dt, chosen = red.high[0]
            if len(chosen) == 0:
                assert dt == 2500
                assert not red.sample.cons
                assert all(c[0] != 0 for c in red.sample.degs)
                return
        pytest.fail("no seed produced an empty copy sample")

    def test_retention_matches_ratio(self):
        inst = star(200)
        cfg = EstimatorConfig(B=4, hash_range=2, q_exp=0.1)
        P = cfg.resolve(inst.n, 2, 2, inst.m)
        assigned = expected = 0.0
        for seed in range(200):
            tape = RandomTape(seed)
            sk = sketch_stream(instance_stream(inst), inst.n, P, tape, cap=None)
            red = streaming_reduction(sk, P, tape, inst.registry, 2)
            assert 0 in red.high
            dt, chosen = red.high[0]
            hub = [(i, l) for (i, l, t), v in sk.G.items() if v == 0]
            got = sum(red.sample.degs.get((0, int(j)), 0) for j in chosen)
            assigned += got
            expected += len(hub) * len(chosen) / (dt * P.g)
        assert abs(assigned / expected - 1) < 0.03

    def test_hub_copies_uniform(self):
        inst = star(200)
        P = EstimatorConfig(B=4, hash_range=2, q_exp=0.1).resolve(inst.n, 2, 2, inst.m)
        tape = RandomTape(3)
        sk = sketch_stream(instance_stream(inst), inst.n, P, tape, cap=None)
        red = streaming_reduction(sk, P, tape, inst.registry, 2)
        dt, chosen = red.high[0]
        loads = np.array([red.sample.degs[(0, int(j))] for j in chosen])
        mean = loads.mean()
        # roughly Poisson loads around the mean
        assert loads.var() < 3 * mean + 1

    def test_termination_reported(self):
        inst = star(3)
        P = EstimatorConfig(B=2, hash_range=4, q_exp=0.01).resolve(4, 2, 2, 3)
        sk = Sketch(4, 2, 2, reservoir=Reservoir(1))
        sk.Gt = {(0, l, 0): 0 for l in range(2)}
        hit = 0
        for seed in range(200):
            try:
                streaming_reduction(sk, P, RandomTape(seed), inst.registry, 2)
            except StreamTerminated as exc:
                hit += 1
                assert exc.variable == 0 and exc.j > exc.dtilde * P.g
        assert hit > 0


class TestEstimate:
    def test_all_false_stream(self):
        inst = Instance.build(6, 2, [((v, v + 1), false_predicate(2, 2)) for v in range(5)])
        res = run_estimate(inst, EstimatorConfig(B=2, c_exp=0, alpha=0.5))
        assert res.out == 0 and res.vtilde == 0

    def test_wrong_m(self):
        inst = generate("maxcut", 6, 8, seed=0)
        with pytest.raises(CSPError):
            run_estimate(inst, EstimatorConfig(B=2), m=9)

    def test_degenerate_equals_offline(self):
        memo = CanonicalMemo()
        for seed in range(10):
            inst = generate("maxdicut", 8, 16, seed=seed)
            res = coupled_run(inst, EstimatorConfig(B=3, c_exp=0, cset="all", alpha=0.5, r=1), seed, a_loc=memo)
            assert res.matched and not res.claim_failure
            assert res.diagnostics["isomorphic"]

    def test_termination_rare_at_default(self):
        delta = 0.1
        stopped = 0
        runs = 30
        for seed in range(runs):
            inst = generate("maxdicut", 64, 256, seed=seed)
            res = coupled_run(inst, EstimatorConfig(epsilon=0.5, delta=delta, r=0, alpha=0.5), seed)
            stopped += res.diagnostics["claims"].get("termination") is False
        assert stopped / runs <= 2 * delta

    def test_order_invariant_sketch(self):
        inst = generate("random", 10, 30, seed=4)
        P = EstimatorConfig(B=3, hash_range=2, r=1).resolve(10, 2, 2, 30)
        base = sketch_stream(instance_stream(inst), 10, P, RandomTape(5)).components()
        perm = np.random.default_rng(0).permutation(30)
        assert sketch_stream(instance_stream(inst, perm), 10, P, RandomTape(5)).components() == base


class TestMGuess:
    def test_index(self):
        assert guess_index(1000) == 9
        assert guess_index(1) == 0 and guess_index(1024) == 10
        with pytest.raises(CSPError):
            guess_index(0)

    def test_matches_known_m(self):
        inst = generate("maxcut", 40, 100, seed=3)
        cfg = EstimatorConfig(B=2, hash_range=2, alpha=0.5, r=0)
        known = run_estimate(inst, cfg, seed=9)
        guessed = run_estimate(inst, cfg, seed=9, m=None)
        assert guessed.params.m == 127
        assert guessed.out == known.out
        assert guessed.sketch.components() == known.sketch.components()

    def test_peak_bound(self):
        inst = generate("maxcut", 40, 100, seed=3)
        cfg = EstimatorConfig(B=2, hash_range=2, r=0)
        res = m_guess_wrapper(
            instance_stream(inst), 40, cfg, k=2, sigma=2, registry=inst.registry, tape=RandomTape(1)
        )
        caps = [cfg.resolve(40, 2, 2, 2 ** (i + 1) - 1).space_cap for i in range(res.copies)]
        assert res.peak_total <= sum(caps)
        assert res.copies == math.ceil(4 * math.log2(40)) + 1

    def test_all_copies_dropped(self, monkeypatch):
        monkeypatch.setenv(SPACE_CAP_ENV, "1")
        inst = generate("maxcut", 10, 20, seed=0)
        with pytest.raises(CSPError):
            run_estimate(inst, EstimatorConfig(B=2, c_exp=0), m=None)
