"""Experiment orchestration: trials, JSON-lines records, summaries, space curves."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import CSPError, Instance, brute_force_val, pad_arity, recombine_estimate, split_trivial
from .generators import generate
from .lp import KNOWN_ALPHA, IntegralityGapEstimate, empirical_alpha, solve_basic_lp
from .reduction import EstimatorConfig, offline_estimate
from .streaming import coupled_run, instance_stream, sketch_stream, streaming_estimate
from .tape import RandomTape

MODES = ("exact", "lp", "offline", "stream", "coupled")


def resolve_alpha(spec, inst: Instance | None = None, *, trials=20, n_max=6, seed=0) -> IntegralityGapEstimate:
    """``VALUE``, ``known:<family>`` or ``empirical`` (over the instance's predicates)."""
    if isinstance(spec, IntegralityGapEstimate):
        return spec
    if isinstance(spec, (int, float, Fraction)):
        return IntegralityGapEstimate(Fraction(spec).limit_denominator(10**9), "given")
    text = str(spec)
    if text.startswith("known:"):
        family = text.split(":", 1)[1]
        if family not in KNOWN_ALPHA:
            raise CSPError(f"no known integrality gap for {family!r}; known: {', '.join(sorted(KNOWN_ALPHA))}")
        return IntegralityGapEstimate(KNOWN_ALPHA[family], "known")
    if text == "empirical":
        if inst is None:
            raise CSPError("empirical alpha needs an instance to read predicates from")
        preds = list({inst.registry[c.pred] for c in inst.constraints if not inst.registry[c.pred].trivial})
        if not preds:
            return IntegralityGapEstimate(Fraction(1), "empirical")
        extra = [inst] if inst.n <= n_max else []
        return empirical_alpha(preds, trials, n_max, sigma=inst.sigma, seed=seed, extra_instances=extra)
    return IntegralityGapEstimate(Fraction(text), "given")


def _num(x):
    if x is None:
        return None
    if isinstance(x, Fraction):
        return str(x)
    return x


@dataclass
class TrialRecord:
    seed: int
    mode: str
    exact: str | None = None
    lp: str | None = None
    offline: float | None = None
    stream: float | None = None
    out_offline: str | None = None
    out_stream: str | None = None
    matched: bool | None = None
    coupling: dict | None = None
    space_peak: int | None = None
    wall_time: float | None = None
    error: str | None = None

    def to_json(self, timing=False) -> str:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return json.dumps(d, sort_keys=True)


@dataclass
class ExperimentSpec:
    mode: str
    config: EstimatorConfig
    instance: Instance | None = None
    path: str | None = None
    generator: dict | None = None  # kwargs for generate(); seed offset per trial
    trials: int = 1
    output: str | None = None
    alpha: object = None
    timing: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise CSPError(f"unknown mode {self.mode!r}")
        if self.trials < 1:
            raise CSPError("trials must be at least 1")
        if self.path is not None and not Path(self.path).exists():
            raise CSPError(f"no such instance file: {self.path}")
        if self.instance is None and self.path is None and self.generator is None:
            raise CSPError("no instance source given")

    def instance_for(self, trial: int) -> Instance:
        if self.instance is not None:
            return self.instance
        if self.path is not None:
            self.instance = Instance.load(self.path)
            return self.instance
        kw = dict(self.generator)
        kw["seed"] = kw.get("seed", 0) + trial
        return generate(**kw)


def _split(inst: Instance):
    inst = pad_arity(inst, inst.k)
    return split_trivial(inst)


def _recombined(v, m0, mt, mf):
    return None if v is None else float(recombine_estimate(v, m0, mt, mf))


def run_trial(inst: Instance, mode: str, cfg: EstimatorConfig, seed: int, alpha=None) -> TrialRecord:
    rec = TrialRecord(seed=seed, mode=mode)
    start = time.perf_counter()
    try:
        if mode in ("exact", "lp"):
            rec.exact = str(brute_force_val(inst))
            if mode == "lp":
                rec.lp = str(solve_basic_lp(inst).objective)
                if Fraction(rec.exact) > Fraction(rec.lp):
                    raise AssertionError(f"val {rec.exact} exceeds LP value {rec.lp}")
        else:
            cfg = cfg.replace(seed=seed, alpha=float(alpha.alpha) if alpha is not None else cfg.alpha)
            core, mt, mf = _split(inst)
            m0 = core.m
            if m0 == 0:
                rec.offline = rec.stream = _recombined(0.0, 0, mt, mf)
            elif mode == "offline":
                res = offline_estimate(core, cfg, RandomTape(seed))
                rec.out_offline = str(res.out)
                rec.offline = _recombined(res.vtilde, m0, mt, mf)
            elif mode == "stream":
                res = streaming_estimate(
                    instance_stream(core), core.n, cfg, k=core.k, sigma=core.sigma,
                    registry=core.registry, m=core.m, tape=RandomTape(seed),
                )
                rec.out_stream = str(res.out)
                rec.stream = _recombined(res.vtilde, m0, mt, mf)
                rec.space_peak = res.peak_total
            else:
                res = coupled_run(core, cfg, seed)
                rec.out_offline = str(res.off)
                rec.out_stream = None if res.on is None else str(res.on)
                rec.offline = _recombined(res.off_vtilde, m0, mt, mf)
                rec.stream = _recombined(res.on_vtilde, m0, mt, mf)
                rec.matched = res.matched
                rec.coupling = {k: bool(v) for k, v in res.diagnostics["claims"].items()}
                rec.space_peak = res.diagnostics.get("space")
    except (CSPError, MemoryError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - start
    return rec


def _mean_stderr(xs):
    xs = [x for x in xs if x is not None]
    if not xs:
        return None, None
    mean = sum(xs) / len(xs)
    if len(xs) < 2:
        return mean, None
    var = sum((x - mean) ** 2 for x in xs) / (len(xs) - 1)
    return mean, math.sqrt(var / len(xs))


def summarize(records, spec: ExperimentSpec, params_echo: dict) -> dict:
    key = {"exact": "exact", "lp": "lp", "offline": "offline", "stream": "stream", "coupled": "offline"}[spec.mode]
    vals = [None if getattr(r, key) is None else float(Fraction(getattr(r, key))) for r in records]
    mean, se = _mean_stderr(vals)
    out = {
        "mode": spec.mode,
        "trials": len(records),
        "errors": sum(r.error is not None for r in records),
        "mean": mean,
        "stderr": se,
        "params": params_echo,
    }
    if spec.mode == "coupled":
        out["match_rate"] = sum(bool(r.matched) for r in records) / len(records)
        out["claim_failure_rate"] = sum(
            r.coupling is None or not all(r.coupling.values()) for r in records
        ) / len(records)
    peaks = [r.space_peak for r in records if r.space_peak is not None]
    if peaks:
        out["space_peak_max"] = max(peaks)
    return out


def run_experiment(spec: ExperimentSpec, seed: int = 0):
    """Run ``spec.trials`` trials with seeds ``seed, seed+1, ...``.

    Writes one JSON record per line to ``spec.output`` and the summary
    to ``<output>.summary.json``.  Returns ``(records, summary)``.
    """
    records = []
    alpha = None
    first = spec.instance_for(0)
    if spec.mode in ("offline", "stream", "coupled"):
        a = spec.alpha if spec.alpha is not None else spec.config.alpha
        if a is None:
            raise CSPError("estimator modes need alpha (VALUE, known:<family> or empirical)")
        alpha = resolve_alpha(a, first, seed=seed)
    for t in range(spec.trials):
        inst = first if t == 0 else spec.instance_for(t)
        records.append(run_trial(inst, spec.mode, spec.config, seed + t, alpha))
    k = max(first.k, 1)
    echo = spec.config.resolve(max(first.n, 2), k, first.sigma, max(first.m, 1)).echo()
    echo["config"] = asdict(spec.config)
    if alpha is not None:
        echo["alpha"] = str(alpha.alpha)
        echo["alpha_provenance"] = alpha.provenance
    summary = summarize(records, spec, echo)
    if spec.output:
        path = Path(spec.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for r in records:
                fh.write(r.to_json(spec.timing) + "\n")
        Path(str(path) + ".summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True, default=str) + "\n")
    return records, summary


# ---------------------------------------------------------------------------
# space curve


@dataclass
class SpacePoint:
    n: int
    m: int
    nc: int
    peak: int
    S: int
    F: int
    G: int
    Gt: int
    reservoir: int


@dataclass
class SpaceCurve:
    points: list
    slope: float
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"slope": self.slope, "params": self.params, "points": [asdict(p) for p in self.points]}, indent=1)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(asdict(self.points[0])))
            w.writeheader()
            for p in self.points:
                w.writerow(asdict(p))


def loglog_slope(ns, ys) -> float:
    if len(ns) < 2:
        return 0.0
    return float(np.polyfit(np.log(ns), np.log(ys), 1)[0])


def space_curve(n_grid, cfg: EstimatorConfig, *, family="maxcut", m_factor=4, k=2, sigma=2, seed=0) -> SpaceCurve:
    """Peak sketch size per ``n`` on random instances with ``m = m_factor * n``."""
    grid = list(n_grid)
    if grid != sorted(grid):
        raise CSPError("n grid must be sorted")
    points = []
    for n in grid:
        inst = generate(family, n, m_factor * n, k, sigma, seed=seed + n, allow_isolated=True)
        params = cfg.resolve(n, k, sigma, inst.m)
        sk = sketch_stream(instance_stream(inst), n, params, RandomTape(seed), cap=None)
        points.append(SpacePoint(n, inst.m, params.nc, sk.peak, len(sk.S), len(sk.F), len(sk.G), len(sk.Gt), len(sk.reservoir)))
    slope = loglog_slope([p.n for p in points], [p.peak for p in points])
    return SpaceCurve(points, slope, {"config": asdict(cfg), "family": family, "m_factor": m_factor, "k": k, "sigma": sigma, "seed": seed})
