import json
import math
from dataclasses import replace

import numpy as np
import pytest

from lpvmpc.errors import ConfigError, EmptyLog
from lpvmpc.harness import (CSV_HEADER, ExperimentConfig, LogRecord, RunLog, compute_metrics,
                            export_csv, import_csv, load_config, n_records, nominal_stiffness,
                            preset_path, reference_window, run_closed_loop)
from lpvmpc.mpc import MpcConfig
from lpvmpc.nn import MlpModel
from lpvmpc.track import desk_speed_v1, desk_track_v1


def make_log(ye, theta=None, vx_err=None, **overrides):
    n = len(ye)
    theta = np.zeros(n) if theta is None else theta
    vx_err = np.zeros(n) if vx_err is None else vx_err
    recs = []
    for i in range(n):
        base = dict(zip(CSV_HEADER, [0.0] * len(CSV_HEADER)))
        base.update(t=i * 0.033, vx=10.0 + vx_err[i], v_ref=10.0, ye=ye[i], theta_e=theta[i],
                    qp_iters=0)
        base.update({k: v[i] for k, v in overrides.items()})
        recs.append(LogRecord(**base))
    return RunLog(recs)


def test_record_count_rule():
    assert n_records(10.0, 0.033) == 304
    assert n_records(0.033, 0.033) == 2
    assert n_records(53.0, 0.033) == 1607


def test_metrics_examples():
    assert compute_metrics(make_log(np.zeros(5))).rmse_ye == 0.0
    assert compute_metrics(make_log(np.full(6, 0.1))).rmse_ye == pytest.approx(0.1)
    assert compute_metrics(make_log(np.array([0.1, -0.1, 0.1, -0.1]))).rmse_ye == pytest.approx(0.1)
    m = compute_metrics(make_log(np.array([0.0, 0.1, 0.2, 0.1])))
    assert m.rmse_ye == pytest.approx(math.sqrt(0.015))
    assert m.rmse_ye == pytest.approx(0.12247, abs=1e-5)
    assert m.max_abs_ye == 0.2


def test_metrics_channels_and_violations():
    n = 4
    log = make_log(np.zeros(n), theta=np.array([0.0, 0.2, 0.0, 0.0]),
                   vx_err=np.array([0.0, 0.0, -0.4, 0.0]),
                   delta=np.array([0.0, 0.6, 0.0, 0.0]), ddelta=np.array([0.0, 0.0, 0.0, 0.3]),
                   solve_time=np.array([0.001, 0.003, 0.002, 0.002]))
    m = compute_metrics(log, MpcConfig())
    assert m.rmse_theta_e == pytest.approx(0.1)
    assert m.rmse_vx == pytest.approx(0.2)
    assert m.max_abs_vx_err == pytest.approx(0.4)
    assert m.mean_solve_time == pytest.approx(0.002)
    assert m.max_solve_time == 0.003
    assert m.constraint_violations == 2
    assert all(v >= 0 for v in m.to_dict().values())


def test_empty_log():
    with pytest.raises(EmptyLog):
        compute_metrics(RunLog())


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    log = make_log(rng.normal(size=20) * 0.1, theta=rng.normal(size=20),
                   vx_err=rng.normal(size=20) / 3,
                   solve_time=rng.uniform(0, 1e-3, 20), cf_hat=rng.uniform(1e4, 2e5, 20))
    path = tmp_path / "run.csv"
    export_csv(log, path)
    lines = path.read_text().split("\n")
    assert lines[0] == ",".join(CSV_HEADER)
    assert len([l for l in lines if l]) == len(log) + 1
    back = import_csv(path)
    assert back.records == log.records
    empty = tmp_path / "empty.csv"
    export_csv(RunLog(), empty)
    assert empty.read_text() == ",".join(CSV_HEADER) + "\n"


def test_reference_window_previews_along_path():
    track, speed = desk_track_v1(), desk_speed_v1()
    # 20 m/s covers 0.66 m per step; the first arc starts at 150 m
    refs = reference_window(track, speed, 146.0, 20.0, 10, 0.033)
    assert refs.curvature[0] == 0.0
    assert refs.curvature[-1] == pytest.approx(1 / 40)
    early = reference_window(track, speed, 140.0, 20.0, 10, 0.033)
    assert early.v_ref[0] == pytest.approx(np.interp(140.66, [95, 145], [21, 12]))


def test_config_round_trip_and_validation(tmp_path):
    cfg = ExperimentConfig(duration=3.0, seed=4, adaptation=False)
    assert cfg.wind.seed == 4
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = load_config(path)
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        ExperimentConfig(duration=0.0)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_preset_loads():
    cfg = load_config("desk_track_v1")
    assert preset_path("desk_track_v1").exists()
    assert cfg.mpc.Np == 10 and cfg.mpc.Ts == 0.033
    assert cfg.adaptation and cfg.nominal_stiffness_scale == 0.7
    assert cfg.model_path and MlpModel.load(cfg.model_path).sizes == (5, 16, 28, 16, 9, 2)
    assert cfg.track == desk_track_v1()


@pytest.fixture(scope="module")
def short_run():
    cfg = ExperimentConfig(adaptation=False, duration=10.0)
    return cfg, run_closed_loop(cfg, timing=False)


def test_short_run_grid_and_bounds(short_run):
    cfg, log = short_run
    assert log.completed
    assert len(log) == 304
    np.testing.assert_allclose(log.column("t"), np.arange(304) * 0.033)
    m = compute_metrics(log, cfg.mpc)
    assert m.constraint_violations == 0
    assert m.max_abs_ye < 0.3
    assert np.all(log.column("solve_time") == 0.0)
    w = log.column("wind")
    assert w.min() >= 25 and w.max() <= 50


def test_run_is_deterministic(short_run, tmp_path):
    cfg, log = short_run
    again = run_closed_loop(cfg, timing=False)
    export_csv(log, tmp_path / "a.csv")
    export_csv(again, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_constant_model_matches_fixed_stiffness(short_run):
    # a network that always outputs the nominal stiffness reproduces the fixed run
    cfg, log = short_run
    nominal = nominal_stiffness(cfg.tire, cfg.nominal_stiffness_scale)
    model = MlpModel.init((5, 3, 2), np.random.default_rng(0), y_mean=list(nominal))
    model.weights = [np.zeros_like(w) for w in model.weights]
    adapted = run_closed_loop(replace(cfg, adaptation=True), model=model, timing=False)
    for name in ("vx", "ye", "theta_e", "delta", "ax"):
        np.testing.assert_allclose(adapted.column(name), log.column(name), atol=1e-6)


def test_adaptation_requires_model():
    with pytest.raises(ConfigError):
        run_closed_loop(ExperimentConfig(adaptation=True, model_path=None, duration=1.0))


def test_solver_cascade_aborts(monkeypatch):
    import lpvmpc.mpc as mpc_module
    from lpvmpc.qp import MAX_ITER, solve_qp

    def stalled(qp, tol, max_iter):
        return solve_qp(qp, tol, max_iter)._replace(status=MAX_ITER)

    monkeypatch.setattr(mpc_module, "solve_qp", stalled)
    log = run_closed_loop(ExperimentConfig(adaptation=False, duration=5.0), timing=False)
    assert not log.completed
    assert "cascade" in log.reason
    # more than ten consecutive failures: the eleventh ends the run
    assert len(log) == 11


def test_divergence_aborts_with_partial_log():
    # no lateral weighting at all: the car leaves the road in the first hairpin
    cfg = ExperimentConfig(adaptation=False, wind=None,
                           mpc=MpcConfig(q_diag=(1, 0, 0, 0, 0), r_diag=(1, 1e-3),
                                         slack_weight=1e-6))
    log = run_closed_loop(cfg, timing=False)
    assert not log.completed
    assert 0 < len(log) < n_records(cfg.duration, cfg.mpc.Ts)
