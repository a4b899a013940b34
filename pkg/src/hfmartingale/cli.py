"""Command line interface: simulate, estimate, check, asymptotics, mc, rate-scan."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._validation import check_theta, parse_floats, parse_pair
from .conditions import check_efficiency, check_rate_optimality
from .estfun import CATALOG, make_estimating_function
from .harness import ExperimentConfig, check_assertions, rate_scan, run_experiment
from .inference import empirical_covariance, theoretical_asymptotics
from .model import builtin_model
from .simulate import SCHEMES, SamplePath, SamplingRule, sampling_schedule, simulate_path
from .solve import SolveSettings, solve_estimating_equation

EXIT_ASSERT = 2


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _common(p):
    p.add_argument("--config", help="JSON config file; command-line flags override its values")
    p.add_argument("--seed", type=int, help="random seed (master seed for Monte Carlo runs)")
    p.add_argument("--out-dir", default=None, help="directory for output files")
    p.add_argument("--workers", type=int, default=1, help="worker processes for replications")


def _model_args(p, need_theta=True):
    p.add_argument("--model", choices=["ou", "cir"], help="builtin model (default: ou)")
    p.add_argument("--m0", type=float, help="CIR long-run mean")
    if need_theta:
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)


def _estimator_args(p):
    p.add_argument("--estimator", choices=CATALOG)
    p.add_argument("--a1", help="comma-separated polynomial coefficients of a1 (non-rate-control)")
    p.add_argument("--a2", help="comma-separated polynomial coefficients of a2 (non-rate-control)")


def _resolve_model(args, cfg):
    block = dict(cfg.get("model", {"name": "ou"}))
    if args.model:
        block = {"name": args.model}
    if getattr(args, "m0", None) is not None:
        block.setdefault("fixed", {})["m0"] = args.m0
    return block, builtin_model(block["name"], block.get("fixed"))


def _resolve_theta(args, cfg):
    theta = dict(cfg.get("theta0", {"alpha": 1.0, "beta": 1.0}))
    if getattr(args, "alpha", None) is not None:
        theta["alpha"] = args.alpha
    if getattr(args, "beta", None) is not None:
        theta["beta"] = args.beta
    return check_theta(theta, "theta")


def _resolve_estimator(args, cfg, model):
    name = args.estimator or cfg.get("estimator")
    if name is None:
        raise SystemExit("an --estimator (or 'estimator' in --config) is required")
    opts = dict(cfg.get("estimator_options", {}))
    if getattr(args, "a1", None):
        opts["a1"] = parse_floats(args.a1)
    if getattr(args, "a2", None):
        opts["a2"] = parse_floats(args.a2)
    return make_estimating_function(name, model, **opts)


def _emit(obj, args, filename):
    text = json.dumps(obj, sort_keys=True, indent=2)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / filename).write_text(text + "\n")
    return text


def cmd_simulate(args):
    cfg = _load_config(args.config)
    _, model = _resolve_model(args, cfg)
    theta = _resolve_theta(args, cfg)
    n = args.n or cfg.get("sampling", {}).get("n")
    if n is None:
        raise SystemExit("--n is required")
    delta = args.delta
    if delta is None:
        s = cfg.get("sampling", {})
        c = args.c if args.c is not None else s.get("c", 1.0)
        rho = args.rho if args.rho is not None else s.get("rho", 0.6)
        delta = sampling_schedule(SamplingRule(c, rho), n)
    scheme = args.scheme or cfg.get("scheme") or ("exact" if model.gaussian_transition else "euler")
    seed = args.seed if args.seed is not None else cfg.get("master_seed", 0)
    path = simulate_path(model, theta, int(n), float(delta), args.substeps, seed, scheme, args.x0)
    out = Path(args.out) if args.out else Path(args.out_dir or ".") / "path.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    path.to_csv(out)
    print(json.dumps({"path": str(out), "n": path.n, "delta": path.delta, "seed": seed, "scheme": scheme},
                     sort_keys=True))
    return 0


def cmd_estimate(args):
    cfg = _load_config(args.config)
    _, model = _resolve_model(args, cfg)
    ef = _resolve_estimator(args, cfg, model)
    path = SamplePath.from_csv(args.data)
    start = parse_pair(args.start) if args.start else tuple(_resolve_theta(args, cfg))
    fixed = {}
    for item in args.fix or []:
        key, _, val = item.partition("=")
        fixed[key] = float(val)
    est = solve_estimating_equation(ef, path, SolveSettings(start=start, fixed=fixed))
    out = est.to_dict()
    try:
        cov = empirical_covariance(ef, path, est.theta_hat, args.covariance)
        se = cov.standard_errors(path.n, path.delta)
        out.update(se_alpha=float(se[0]), se_beta=float(se[1]), covariance=cov.to_dict())
    except np.linalg.LinAlgError as exc:
        out.update(se_alpha=None, se_beta=None, covariance_error=str(exc))
    print(_emit(out, args, "estimate.json"))
    return 0


def cmd_check(args):
    cfg = _load_config(args.config)
    _, model = _resolve_model(args, cfg)
    theta = _resolve_theta(args, cfg)
    ef = _resolve_estimator(args, cfg, model)
    grid = parse_floats(args.grid) if args.grid else None
    reports = list(check_rate_optimality(ef, model, theta, grid, args.tol))
    reports += list(check_efficiency(ef, model, theta, grid, args.tol))
    width = max(len(r.condition) for r in reports)
    print(f"estimator {ef.name} on {model.name} at alpha={theta.alpha}, beta={theta.beta}")
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"  {r.condition:<{width}}  max residual {r.max_residual:.3e}  tol {r.tol:.1e}  {status} ({r.verdict})")
    _emit({"estimator": ef.name, "model": model.name, "theta": list(theta),
           "reports": [r.to_dict() for r in reports]}, args, "check.json")
    if args.json:
        print(json.dumps({r.condition: r.to_dict() for r in reports}, sort_keys=True))
    return 0


def cmd_asymptotics(args):
    cfg = _load_config(args.config)
    _, model = _resolve_model(args, cfg)
    theta = _resolve_theta(args, cfg)
    ef = _resolve_estimator(args, cfg, model)
    theta0 = check_theta(parse_pair(args.theta0)) if args.theta0 else theta
    rep = theoretical_asymptotics(ef, model, theta, theta0)
    print(_emit({"estimator": ef.name, "model": model.name, "theta": list(theta), "theta0": list(theta0),
                 **rep.to_dict()}, args, "asymptotics.json"))
    return 0


def _experiment_config(args):
    cfg = _load_config(args.config)
    if not cfg:
        raise SystemExit("--config is required")
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if getattr(args, "replications", None):
        cfg["replications"] = args.replications
    return ExperimentConfig.from_dict(cfg)


def cmd_mc(args):
    config = _experiment_config(args)
    report = run_experiment(config, workers=args.workers, out_dir=args.out_dir)
    summary = {k: v for k, v in report.summary.items() if k != "theory"}
    print(json.dumps(summary, sort_keys=True, indent=2))
    if args.assert_:
        failures = check_assertions(report, config.assertions)
        for f in failures:
            print(f"ASSERTION FAILED: {f}", file=sys.stderr)
        if failures:
            return EXIT_ASSERT
    return 0


def cmd_rate_scan(args):
    config = _experiment_config(args)
    report = rate_scan(config, workers=args.workers, out_dir=args.out_dir)
    print(json.dumps({"scan": report.scan, **report.summary}, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hfmartingale",
                                     description="Martingale estimating functions for high-frequency diffusions")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an equidistant path to CSV")
    _common(p)
    _model_args(p)
    p.add_argument("--n", type=int)
    p.add_argument("--delta", type=float, help="sampling step (default: c * n^-rho)")
    p.add_argument("--rho", type=float, help="sampling exponent, 1/3 < rho < 1 (default 0.6)")
    p.add_argument("--c", type=float, help="sampling constant (default 1)")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--substeps", type=int)
    p.add_argument("--x0", type=float)
    p.add_argument("--out", help="CSV file (default: <out-dir>/path.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="solve the estimating equation on a CSV path")
    _common(p)
    _model_args(p, need_theta=False)
    _estimator_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--start", help="alpha,beta")
    p.add_argument("--fix", action="append", help="fix a parameter, e.g. --fix beta=1")
    p.add_argument("--covariance", choices=["rate-optimal", "general"], default="rate-optimal")
    p.set_defaults(func=cmd_estimate, alpha=None, beta=None)

    p = sub.add_parser("check", help="check rate-optimality and efficiency conditions")
    _common(p)
    _model_args(p)
    _estimator_args(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--grid", help="comma-separated x values (default: 21 stationary quantiles)")
    p.add_argument("--json", action="store_true", help="also print the JSON report")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("asymptotics", help="theoretical limit matrices by quadrature")
    _common(p)
    _model_args(p)
    _estimator_args(p)
    p.add_argument("--theta0", help="true parameter alpha0,beta0 (default: same as --alpha/--beta)")
    p.set_defaults(func=cmd_asymptotics)

    p = sub.add_parser("mc", help="Monte Carlo experiment from a JSON config")
    _common(p)
    p.add_argument("--replications", type=int)
    p.add_argument("--assert", dest="assert_", action="store_true",
                   help="exit with status 2 when the summary violates the configured thresholds")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("rate-scan", help="empirical convergence rates across an n-list")
    _common(p)
    p.add_argument("--replications", type=int)
    p.set_defaults(func=cmd_rate_scan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
