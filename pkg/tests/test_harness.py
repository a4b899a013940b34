import json

import numpy as np
import pytest

from hfmartingale.harness import (
    CSV_HEADER,
    ExperimentAborted,
    ExperimentConfig,
    MCReport,
    ReplicationRecord,
    check_assertions,
    rate_scan,
    run_experiment,
    summarize,
)
from hfmartingale.model import ParamPoint


def small_config(**overrides):
    data = {"model": {"name": "ou"}, "theta0": {"alpha": 1.0, "beta": 1.0}, "estimator": "quad-exact-efficient",
            "sampling": {"n": 400, "rho": 0.6, "c": 1.0}, "replications": 6, "master_seed": 11}
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def rec(i, a, b, converged=True):
    return ReplicationRecord(i, i, 100, 0.1, converged, ParamPoint(1.0 + a, 1.0 + b), 0.0, (a, b))


def test_summarize_examples():
    same = summarize([rec(0, 0.3, 0.1), rec(1, 0.3, 0.1)])
    assert same["var_alpha_scaled"] == 0.0 and same["var_beta_scaled"] == 0.0
    assert "corr" not in same
    two = summarize([rec(0, -1.0, 0.5), rec(1, 1.0, -0.5)])
    assert two["var_alpha_scaled"] == pytest.approx(2.0)
    assert two["corr"] == pytest.approx(-1.0)


def test_summarize_single_record_and_failures():
    one = summarize([rec(0, 0.2, -0.1), rec(1, 0.0, 0.0, converged=False)])
    assert one["M"] == 2 and one["M_converged"] == 1
    assert "var_alpha_scaled" not in one
    assert one["record"]["std_err_alpha_scaled"] == 0.2


def test_summarize_ratios(ou):
    from hfmartingale.estfun import make_estimating_function
    from hfmartingale.inference import theoretical_asymptotics

    theory = theoretical_asymptotics(make_estimating_function("quad-exact-efficient", ou), ou, (1.0, 1.0))
    rng = np.random.default_rng(0)
    recs = [rec(i, *rng.standard_normal(2)) for i in range(40)]
    s = summarize(recs, theory)
    assert s["ratio_var_to_theory"][0] == pytest.approx(s["var_alpha_scaled"] / s["theory_cov_rate_optimal"][0])
    assert s["ratio_var_to_bound"][1] == pytest.approx(s["var_beta_scaled"] / s["sigma_bound"][1])
    assert "skew_alpha" in s and "excess_kurtosis_beta" in s


def test_config_validation():
    with pytest.raises(ValueError, match="unknown estimator"):
        small_config(estimator="mle")
    with pytest.raises(ValueError):
        small_config(replications=0)
    with pytest.raises(ValueError, match="strictly increasing"):
        small_config(sampling={"n_list": [100, 100, 200, 400]})
    with pytest.raises(ValueError, match="unknown config keys"):
        small_config(bogus=1)
    with pytest.raises(ValueError):
        small_config(sampling={"n": 100, "rho": 0.2})
    cfg = small_config()
    assert cfg.scheme == "exact"
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_run_experiment_outputs(tmp_path):
    report = run_experiment(small_config(), out_dir=tmp_path)
    lines = (tmp_path / "records.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 7
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["summary"]["M"] == 6
    assert summary["config"]["master_seed"] == 11
    assert report.summary["M_converged"] == 6


def test_single_replication_summary():
    report = run_experiment(small_config(replications=1))
    assert report.summary["M"] == 1
    assert "record" in report.summary
    assert "var_alpha_scaled" not in report.summary
    assert check_assertions(report) == ["fewer than two converged replications"]


def test_reproducible_across_workers(tmp_path):
    cfg = small_config(replications=8)
    run_experiment(cfg, workers=1, out_dir=tmp_path / "w1")
    run_experiment(cfg, workers=2, out_dir=tmp_path / "w2")
    run_experiment(cfg, workers=1, out_dir=tmp_path / "again")
    for name in ("records.csv", "summary.json"):
        ref = (tmp_path / "w1" / name).read_bytes()
        assert (tmp_path / "w2" / name).read_bytes() == ref
        assert (tmp_path / "again" / name).read_bytes() == ref


def test_replications_order_independent():
    from hfmartingale.harness import _replicate

    cfg = small_config().to_dict()
    cfg["n"] = 400
    forward = [_replicate((cfg, 400, i, ())) for i in range(4)]
    backward = [_replicate((cfg, 400, i, ())) for i in reversed(range(4))][::-1]
    assert [r.csv_row() for r in forward] == [r.csv_row() for r in backward]


def test_rate_scan_small(tmp_path):
    cfg = small_config(sampling={"n_list": [200, 400, 800, 1600]}, replications=4)
    report = rate_scan(cfg, out_dir=tmp_path)
    assert [row["n"] for row in report.scan] == [200, 400, 800, 1600]
    assert "slope_beta" in report.summary
    assert (tmp_path / "records_n1600.csv").exists()
    with pytest.raises(ValueError):
        rate_scan(small_config())
    with pytest.raises(ValueError):
        run_experiment(cfg)


def test_failure_thresholds(monkeypatch):
    import hfmartingale.harness as h

    def flaky(task):
        config, n, index, stream = task
        return ReplicationRecord(index, index, n, 0.1, index % 10 != 0, ParamPoint(1.0, 1.0), 0.0, (0.1 * index, 0.0))

    monkeypatch.setattr(h, "_replicate", flaky)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        report = h.run_experiment(small_config(replications=20))
    assert report.summary["M_converged"] == 18

    monkeypatch.setattr(h, "_replicate", lambda task: ReplicationRecord(task[2], 0, 1, 0.1, task[2] % 2 == 0))
    with pytest.raises(ExperimentAborted):
        h.run_experiment(small_config(replications=10))


def test_check_assertions():
    summary = {"var_alpha_scaled": 2.5, "var_beta_scaled": 0.5, "corr": 0.3, "sigma_bound": [2.0, 0.5],
               "skew_alpha": 0.1, "skew_beta": 0.9}
    report = MCReport({}, [], summary)
    failures = check_assertions(report)
    assert any("var_alpha_scaled" in f for f in failures)
    assert any("corr" in f for f in failures)
    assert not any("var_beta" in f for f in failures)
    assert any("skew_beta" in f for f in check_assertions(report, {"max_abs_skew": 0.25}))


def test_csv_row_blanks_when_not_converged():
    assert ReplicationRecord(3, 9, 10, 0.1, False).csv_row() == [3, 9, 0, "", "", "", ""]
    row = rec(1, 0.25, -0.5).csv_row()
    assert row[2] == 1 and row[5] == "0.25"
