"""``cspstream`` command line."""

from __future__ import annotations

import argparse
import json
import sys

from .core import CSPError, Instance
from .experiments import MODES, ExperimentSpec, run_experiment, space_curve
from .generators import FAMILIES, generate
from .reduction import EstimatorConfig


def _config(args) -> EstimatorConfig:
    return EstimatorConfig(
        epsilon=args.epsilon,
        delta=args.delta,
        B=args.B,
        rho=args.rho,
        r=args.radius,
        c_exp=args.c_exp,
        q_exp=args.q_exp,
        seed=args.seed,
        policy=args.policy,
        cset=args.cset,
    )


def _estimator_flags(p):
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--B", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--c-exp", type=float, default=None)
    p.add_argument("--q-exp", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", default="exact", choices=["exact", "coupled-Gtilde", "worst-case-random"])
    p.add_argument("--cset", default="fisher-yates", choices=["fisher-yates", "reservoir", "all"])


def cmd_estimate(args):
    spec = ExperimentSpec(
        mode=args.mode,
        config=_config(args),
        path=args.input,
        trials=args.trials,
        output=args.json,
        alpha=args.alpha,
        timing=args.timing,
    )
    records, summary = run_experiment(spec, seed=args.seed)
    if not args.json:
        for r in records:
            print(r.to_json(args.timing))
    print(json.dumps({k: summary[k] for k in summary if k != "params"}, sort_keys=True))
    return 0


def cmd_gen(args):
    inst = generate(args.family, args.n, args.m, args.k, args.sigma, args.seed, args.allow_isolated)
    if args.out:
        inst.save(args.out)
    else:
        sys.stdout.write(inst.dumps())
    return 0


def cmd_space_curve(args):
    cfg = EstimatorConfig(epsilon=args.epsilon, B=args.B, c_exp=args.c_exp, r=args.radius)
    curve = space_curve(sorted(args.n_grid), cfg, family=args.family, m_factor=args.m_factor, seed=args.seed)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(curve.to_json() + "\n")
    if args.csv:
        curve.write_csv(args.csv)
    print(json.dumps({"slope": curve.slope, "peaks": [p.peak for p in curve.points]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cspstream", description="Sublinear-space Max-CSP estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run an estimator on an instance file")
    est.add_argument("--input", required=True)
    est.add_argument("--mode", choices=MODES, default="offline")
    _estimator_flags(est)
    est.add_argument("--alpha", default=None, help="VALUE, known:<family> or empirical")
    est.add_argument("--trials", type=int, default=1)
    est.add_argument("--json", default=None, help="JSON-lines output path")
    est.add_argument("--timing", action="store_true", help="include wall time in records")
    est.set_defaults(func=cmd_estimate)

    gen = sub.add_parser("gen", help="generate a random instance")
    gen.add_argument("--family", choices=FAMILIES + ("random-table",), required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--m", type=int, required=True)
    gen.add_argument("--k", type=int, default=2)
    gen.add_argument("--sigma", type=int, default=2)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--allow-isolated", action="store_true")
    gen.add_argument("--out", default=None)
    gen.set_defaults(func=cmd_gen)

    sc = sub.add_parser("space-curve", help="peak sketch size against n")
    sc.add_argument("--n-grid", type=int, nargs="+", required=True)
    sc.add_argument("--family", choices=FAMILIES, default="maxcut")
    sc.add_argument("--m-factor", type=int, default=4)
    sc.add_argument("--epsilon", type=float, default=0.5)
    sc.add_argument("--B", type=int, default=2)
    sc.add_argument("--c-exp", type=float, default=0.5)
    sc.add_argument("--radius", type=int, default=1)
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--json", default=None)
    sc.add_argument("--csv", default=None)
    sc.set_defaults(func=cmd_space_curve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CSPError as exc:
        print(f"cspstream: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
