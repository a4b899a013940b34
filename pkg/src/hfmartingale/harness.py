"""Monte Carlo experiments: simulate, solve and summarize standardized errors.

Replication ``i`` draws from a stream keyed by ``(master_seed, i)``, so the
records do not depend on execution order or worker count.  Outputs are a flat
CSV of records and a JSON summary with sorted keys.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import stats

from .estfun import CATALOG, make_estimating_function
from .exceptions import NoConvergence
from .inference import theoretical_asymptotics
from .model import ParamPoint, as_param, model_from_config
from .simulate import SamplingRule, derive_seed, sampling_schedule, simulate_path
from .solve import SolveSettings, solve_estimating_equation

logger = logging.getLogger(__name__)

CSV_HEADER = ["rep", "seed", "converged", "alpha_hat", "beta_hat", "std_err_alpha_scaled", "std_err_beta_scaled"]
WARN_FRACTION = 0.02
ABORT_FRACTION = 0.20


class ExperimentAborted(RuntimeError):
    """Too many replications failed to converge."""


@dataclass
class ExperimentConfig:
    model: dict
    theta0: ParamPoint
    estimator: str
    replications: int
    master_seed: int
    n: int | None = None
    n_list: list | None = None
    c: float = 1.0
    rho: float = 0.6
    estimator_options: dict = field(default_factory=dict)
    scheme: str | None = None
    substeps: int | None = None
    solver: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: {"csv": "records.csv", "json": "summary.json"})
    assertions: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta0 = as_param(self.theta0)
        if self.estimator not in CATALOG:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {CATALOG}")
        if int(self.replications) < 1:
            raise ValueError("replications must be at least 1")
        self.replications = int(self.replications)
        self.master_seed = int(self.master_seed)
        SamplingRule(self.c, self.rho)
        if self.n is None and not self.n_list:
            raise ValueError("config needs 'n' or 'n_list'")
        if self.n_list is not None:
            self.n_list = [int(v) for v in self.n_list]
            if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
                raise ValueError("n_list must be strictly increasing")
        if self.scheme is None:
            self.scheme = "exact" if self.model.get("name") == "ou" else "euler"

    @property
    def rule(self) -> SamplingRule:
        return SamplingRule(self.c, self.rho)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        sampling = data.pop("sampling", {})
        for key in ("n", "n_list", "c", "rho"):
            if key in sampling:
                data.setdefault(key, sampling[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "theta0": {"alpha": self.theta0.alpha, "beta": self.theta0.beta},
            "estimator": self.estimator,
            "estimator_options": self.estimator_options,
            "replications": self.replications,
            "master_seed": self.master_seed,
            "sampling": {"n": self.n, "n_list": self.n_list, "c": self.c, "rho": self.rho},
            "scheme": self.scheme,
            "substeps": self.substeps,
            "solver": self.solver,
            "output": self.output,
            "assertions": self.assertions,
        }


@dataclass
class ReplicationRecord:
    index: int
    seed: int
    n: int
    delta: float
    converged: bool
    theta_hat: ParamPoint | None = None
    g_norm: float | None = None
    std_err: tuple | None = None

    def csv_row(self) -> list:
        def fmt(v):
            return "" if v is None else repr(float(v))

        th = self.theta_hat if self.converged else (None, None)
        se = self.std_err if self.converged else (None, None)
        return [self.index, self.seed, int(self.converged), fmt(th[0]), fmt(th[1]), fmt(se[0]), fmt(se[1])]


@lru_cache(maxsize=8)
def _components(model_json: str, estimator: str, options_json: str):
    model = model_from_config(json.loads(model_json))
    ef = make_estimating_function(estimator, model, **json.loads(options_json))
    return model, ef


def _solver_settings(solver: dict, theta0: ParamPoint) -> SolveSettings:
    opts = dict(solver)
    start = opts.pop("start", None)
    start = as_param(start) if start is not None else theta0
    if "multistart" in opts and opts["multistart"] is not None:
        opts["multistart"] = tuple(tuple(as_param(s)) for s in opts["multistart"])
    if "bounds" in opts:
        opts["bounds"] = tuple(tuple(b) for b in opts["bounds"])
    return SolveSettings(start=tuple(start), **opts)


def _replicate(task) -> ReplicationRecord:
    config, n, index, stream = task
    model, ef = _components(json.dumps(config["model"], sort_keys=True), config["estimator"],
                            json.dumps(config["estimator_options"], sort_keys=True))
    theta0 = as_param(config["theta0"])
    rule = SamplingRule(config["sampling"]["c"], config["sampling"]["rho"])
    delta = sampling_schedule(rule, n)
    seed = derive_seed(config["master_seed"], *stream, index)
    path = simulate_path(model, theta0, n, delta, config["substeps"], seed, config["scheme"])
    try:
        est = solve_estimating_equation(ef, path, _solver_settings(config["solver"], theta0))
    except NoConvergence:
        return ReplicationRecord(index, seed, n, delta, False)
    th = est.theta_hat
    se = (math.sqrt(n * delta) * (th.alpha - theta0.alpha), math.sqrt(n) * (th.beta - theta0.beta))
    return ReplicationRecord(index, seed, n, delta, True, th, est.g_norm, se)


def _run_records(config: ExperimentConfig, n: int, stream: tuple, workers: int) -> list:
    echo = config.to_dict()
    tasks = [(echo, n, i, stream) for i in range(config.replications)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        records = [_replicate(t) for t in tasks]
    records.sort(key=lambda r: r.index)
    failed = sum(not r.converged for r in records)
    frac = failed / len(records)
    if frac > ABORT_FRACTION:
        raise ExperimentAborted(f"{failed} of {len(records)} replications did not converge (n={n})")
    if frac > WARN_FRACTION:
        warnings.warn(f"{failed} of {len(records)} replications did not converge (n={n}); excluded from moments",
                      RuntimeWarning, stacklevel=3)
    return records


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def summarize(records, theory=None) -> dict:
    """Moments of the standardized errors of the converged records.

    Variance-type fields need at least two converged records and are omitted
    otherwise.  ``theory`` is an :class:`AsymptoticsReport` or ``None``.
    """
    conv = [r for r in records if r.converged]
    out = {"M": len(records), "M_converged": len(conv)}
    if len(conv) == 1:
        out["record"] = {"alpha_hat": conv[0].theta_hat.alpha, "beta_hat": conv[0].theta_hat.beta,
                         "std_err_alpha_scaled": conv[0].std_err[0], "std_err_beta_scaled": conv[0].std_err[1]}
    if len(conv) < 2:
        return out
    e = np.array([r.std_err for r in conv], dtype=float)
    th = np.array([tuple(r.theta_hat) for r in conv], dtype=float)
    var = e.var(axis=0, ddof=1)
    out["mean_alpha_scaled"], out["mean_beta_scaled"] = e.mean(axis=0)
    out["var_alpha_scaled"], out["var_beta_scaled"] = var
    out["sd_alpha_hat"], out["sd_beta_hat"] = th.std(axis=0, ddof=1)
    if np.all(var > 0):
        out["corr"] = float(np.corrcoef(e.T)[0, 1])
        if len(conv) >= 3:
            out["skew_alpha"], out["skew_beta"] = stats.skew(e, axis=0, bias=False)
        if len(conv) >= 4:
            out["excess_kurtosis_alpha"], out["excess_kurtosis_beta"] = stats.kurtosis(e, axis=0, fisher=True,
                                                                                      bias=False)
    if theory is not None:
        rate = np.diag(theory.cov_rate_optimal)
        bound = np.diag(theory.sigma_bound)
        out["theory_cov_rate_optimal"] = rate.tolist()
        out["sigma_bound"] = bound.tolist()
        out["ratio_var_to_theory"] = (var / rate).tolist()
        out["ratio_var_to_bound"] = (var / bound).tolist()
    return _clean(out)


@dataclass
class MCReport:
    config: dict
    records: list
    summary: dict
    scan: list | None = None

    def to_dict(self) -> dict:
        out = {"config": self.config, "summary": self.summary}
        if self.scan is not None:
            out["scan"] = self.scan
        return _clean(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(r.csv_row())


def _theory(config: ExperimentConfig):
    model, ef = _components(json.dumps(config.model, sort_keys=True), config.estimator,
                            json.dumps(config.estimator_options, sort_keys=True))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return theoretical_asymptotics(ef, model, config.theta0, config.theta0)
    except Exception as exc:  # theory is a comparison aid; the experiment stands without it
        logger.warning("theoretical asymptotics unavailable: %s", exc)
        return None


def run_experiment(config: ExperimentConfig, workers: int = 1, out_dir=None) -> MCReport:
    """M replications at a single n; writes CSV and JSON when ``out_dir`` is given."""
    if config.n is None:
        raise ValueError("run_experiment needs a single 'n'; use rate_scan for 'n_list'")
    records = _run_records(config, config.n, (), workers)
    theory = _theory(config)
    summary = summarize(records, theory)
    summary["n"] = config.n
    summary["delta"] = sampling_schedule(config.rule, config.n)
    if theory is not None:
        summary["theory"] = theory.to_dict()
    report = MCReport(config.to_dict(), records, _clean(summary))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(records, out / config.output.get("csv", "records.csv"))
        (out / config.output.get("json", "summary.json")).write_text(report.to_json())
    return report


def rate_scan(config: ExperimentConfig, workers: int = 1, out_dir=None) -> MCReport:
    """Empirical sd of the estimates across an increasing n-list and fitted log-log slopes."""
    if not config.n_list or len(config.n_list) < 4:
        raise ValueError("rate_scan needs an n_list with at least four values")
    scan, all_records = [], []
    for j, n in enumerate(config.n_list):
        records = _run_records(config, n, (j,), workers)
        all_records.extend(records)
        s = summarize(records)
        scan.append({"n": n, "delta": sampling_schedule(config.rule, n), "M_converged": s["M_converged"],
                     "sd_alpha_hat": s.get("sd_alpha_hat"), "sd_beta_hat": s.get("sd_beta_hat")})
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_records(records, Path(out_dir) / f"records_n{n}.csv")
    logn = np.log([row["n"] for row in scan])
    summary = {}
    for key in ("alpha", "beta"):
        sds = [row[f"sd_{key}_hat"] for row in scan]
        if all(s is not None and s > 0 for s in sds):
            summary[f"slope_{key}"] = float(np.polyfit(logn, np.log(sds), 1)[0])
    report = MCReport(config.to_dict(), all_records, _clean(summary), _clean(scan))
    if out_dir is not None:
        (Path(out_dir) / config.output.get("json", "summary.json")).write_text(report.to_json())
    return report


def check_assertions(report: MCReport, assertions: dict | None = None) -> list:
    """Compare an MC summary against acceptance thresholds; returns failure messages.

    Supported keys: ``rel_tol`` (variances against the efficient bound,
    default 0.15), ``max_abs_corr`` (default 0.15), ``max_abs_skew`` and
    ``max_abs_excess_kurtosis`` (unchecked unless given).
    """
    a = {"rel_tol": 0.15, "max_abs_corr": 0.15}
    a.update(assertions or {})
    s = report.summary
    failures = []
    if "var_alpha_scaled" not in s:
        return ["fewer than two converged replications"]
    if "sigma_bound" in s:
        for k, name in enumerate(("alpha", "beta")):
            target = s["sigma_bound"][k]
            got = s[f"var_{name}_scaled"]
            if abs(got - target) > a["rel_tol"] * target:
                failures.append(f"var_{name}_scaled={got:.4g} outside {target:.4g} +- {a['rel_tol']:.0%}")
    corr = s.get("corr")
    if corr is None or abs(corr) > a["max_abs_corr"]:
        failures.append(f"|corr|={corr} exceeds {a['max_abs_corr']}")
    for key, field_names in (("max_abs_skew", ("skew_alpha", "skew_beta")),
                             ("max_abs_excess_kurtosis", ("excess_kurtosis_alpha", "excess_kurtosis_beta"))):
        if key in a:
            for f in field_names:
                if s.get(f) is None or abs(s[f]) > a[key]:
                    failures.append(f"|{f}|={s.get(f)} exceeds {a[key]}")
    return failures
