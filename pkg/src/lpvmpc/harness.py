"""Closed-loop experiments: plant + stiffness adaptation + LPV-MPC, metrics and CSV logs."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, EmptyLog, SingularGeometry
from .lpv import StiffnessPair
from .mpc import MpcConfig, ReferenceWindow, mpc_step
from .nn import MlpModel, predict_stiffness
from .qp import MAX_ITER
from .track import (SpeedProfile, TrackSpec, WindProfile, advance_arclength, curvature_at,
                    desk_speed_v1, desk_track_v1, speed_at, wind_at)
from .vehicle import (PacejkaCoeffs, VehicleParams, VehicleState, drag_force, simulate_period,
                      tire_from_dict)

log = logging.getLogger(__name__)

CSV_HEADER = ("t", "s", "vx", "vy", "omega", "ye", "theta_e", "delta", "ax", "ddelta", "dax",
              "v_ref", "k", "wind", "cf_hat", "cr_hat", "qp_iters", "solve_time", "slack")
PLANT_SUBSTEPS = 10
MAX_ITER_CASCADE = 10
# runs leaving this envelope are stopped early; the controller has lost the path
DIVERGENCE_YE = 3.0
DIVERGENCE_THETA = math.pi / 2
BOUND_TOL = 1e-9


@dataclass
class ExperimentConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    tire: Optional[PacejkaCoeffs] = None
    mpc: MpcConfig = field(default_factory=MpcConfig)
    track: TrackSpec = field(default_factory=desk_track_v1)
    speed: SpeedProfile = field(default_factory=desk_speed_v1)
    wind: Optional[WindProfile] = field(default_factory=WindProfile)
    adaptation: bool = True
    model_path: Optional[str] = None
    nominal_stiffness_scale: float = 1.0
    duration: float = 53.0
    seed: int = 0

    def __post_init__(self):
        if self.tire is None:
            self.tire = PacejkaCoeffs.from_vehicle(self.vehicle)
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if not self.nominal_stiffness_scale > 0:
            raise ConfigError("nominal_stiffness_scale must be positive")
        if self.wind is not None and self.wind.seed != self.seed:
            self.wind = WindProfile(**{**self.wind.to_dict(), "seed": self.seed})

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        known = {"name", "vehicle", "tire", "mpc", "track", "speed", "wind", "adaptation",
                 "model_path", "nominal_stiffness_scale", "duration", "seed", "ga", "train"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            vehicle = VehicleParams.from_dict(data.get("vehicle", {}))
            track = data.get("track", "desk_track_v1")
            speed = data.get("speed", "desk_track_v1")
            model_path = data.get("model_path")
            if model_path and base_dir is not None and not Path(model_path).is_absolute():
                model_path = str(Path(base_dir) / model_path)
            wind = data.get("wind", {})
            return cls(
                vehicle=vehicle,
                tire=tire_from_dict(data.get("tire"), vehicle),
                mpc=MpcConfig.from_dict(data.get("mpc", {})),
                track=desk_track_v1() if track == "desk_track_v1" else TrackSpec.from_dict(track),
                speed=desk_speed_v1() if speed == "desk_track_v1" else SpeedProfile.from_dict(speed),
                wind=None if wind is None else WindProfile.from_dict(wind),
                adaptation=bool(data.get("adaptation", True)),
                model_path=model_path,
                nominal_stiffness_scale=float(data.get("nominal_stiffness_scale", 1.0)),
                duration=float(data.get("duration", 53.0)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "vehicle": self.vehicle.to_dict(),
            "tire": self.tire.to_dict(),
            "mpc": self.mpc.to_dict(),
            "track": self.track.to_dict(),
            "speed": self.speed.to_dict(),
            "wind": None if self.wind is None else self.wind.to_dict(),
            "adaptation": self.adaptation,
            "model_path": self.model_path,
            "nominal_stiffness_scale": self.nominal_stiffness_scale,
            "duration": self.duration,
            "seed": self.seed,
        }


def preset_path(name: str) -> Path:
    return Path(str(resources.files("lpvmpc") / "presets" / f"{name}.json"))


def read_config_dict(path_or_preset) -> tuple[dict, Path]:
    """Raw JSON of a config file or preset name, plus its directory."""
    path = Path(path_or_preset)
    if not path.exists():
        candidate = preset_path(str(path_or_preset))
        if not candidate.exists():
            raise ConfigError(f"config file not found: {path_or_preset}")
        path = candidate
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data, path.parent


def load_config(path_or_preset) -> ExperimentConfig:
    data, base_dir = read_config_dict(path_or_preset)
    return ExperimentConfig.from_dict(data, base_dir=base_dir)


class LogRecord(NamedTuple):
    t: float
    s: float
    vx: float
    vy: float
    omega: float
    ye: float
    theta_e: float
    delta: float
    ax: float
    ddelta: float
    dax: float
    v_ref: float
    k: float
    wind: float
    cf_hat: float
    cr_hat: float
    qp_iters: int
    solve_time: float
    slack: float


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    status: str = "completed"
    reason: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def column(self, name: str) -> np.ndarray:
        i = CSV_HEADER.index(name)
        return np.array([r[i] for r in self.records], dtype=float)


def n_records(duration: float, ts: float) -> int:
    return int(math.floor(duration / ts + 1e-9)) + 1


def nominal_stiffness(coeffs: PacejkaCoeffs, scale: float = 1.0) -> StiffnessPair:
    return StiffnessPair(scale * coeffs.slope("front"), scale * coeffs.slope("rear")).clamped()


def reference_window(track: TrackSpec, speed: SpeedProfile, s: float, v: float,
                     Np: int, ts: float) -> ReferenceWindow:
    """Preview along the path assuming the vehicle keeps its current speed."""
    v = max(v, 0.0)
    v_ref = np.empty(Np)
    curv = np.empty(Np)
    for i in range(Np):
        curv[i] = curvature_at(track, s + i * v * ts)
        v_ref[i] = speed_at(speed, s + (i + 1) * v * ts)
    return ReferenceWindow(v_ref, curv)


def run_closed_loop(cfg: ExperimentConfig, model: Optional[MlpModel] = None,
                    timing: bool = True) -> RunLog:
    """Simulate the full loop; ``timing=False`` writes 0 into ``solve_time``.

    Measurement is the exact plant state. Each period: predict stiffness (when
    adaptation is on), build the reference preview, solve the MPC, hold the
    input over ``PLANT_SUBSTEPS`` RK4 steps under the current wind.
    """
    params, coeffs, mcfg = cfg.vehicle, cfg.tire, cfg.mpc
    if cfg.adaptation and model is None:
        if not cfg.model_path:
            raise ConfigError("adaptation is on but no model_path is configured")
        model = MlpModel.load(cfg.model_path)
    fixed = nominal_stiffness(coeffs, cfg.nominal_stiffness_scale)
    ts = mcfg.Ts
    n = n_records(cfg.duration, ts)

    s = 0.0
    v0 = speed_at(cfg.speed, 0.0)
    x = VehicleState(v0, 0.0, 0.0, 0.0, 0.0)
    u_prev = np.clip([0.0, drag_force(v0, wind_at(cfg.wind, 0.0), params) / params.m],
                     mcfg.u_min, mcfg.u_max)
    prev = None
    out = RunLog()
    stalls = 0
    for i in range(n):
        t = i * ts
        wind = wind_at(cfg.wind, t)
        k = curvature_at(cfg.track, s)
        if cfg.adaptation:
            stiff = predict_stiffness(model, x.vx, x.vy, u_prev[0], u_prev[1], x.omega)
        else:
            stiff = fixed
        refs = reference_window(cfg.track, cfg.speed, s, x.vx, mcfg.Np, ts)
        t0 = time.perf_counter()
        sol = mpc_step(x, stiff, refs, u_prev, prev, mcfg, params)
        elapsed = time.perf_counter() - t0 if timing else 0.0
        u = sol.u0
        du = (u.delta - u_prev[0], u.ax - u_prev[1])
        out.records.append(LogRecord(
            t, s, x.vx, x.vy, x.omega, x.ye, x.theta_e, u.delta, u.ax, du[0], du[1],
            speed_at(cfg.speed, s), k, wind, stiff.cf, stiff.cr, sol.qp_iterations,
            elapsed, sol.slack))

        stalls = stalls + 1 if sol.status == MAX_ITER else 0
        if sol.status == MAX_ITER:
            log.warning("QP hit max_iter at t=%.3f", t)
        if stalls > MAX_ITER_CASCADE:
            out.status, out.reason = "aborted", "solver failure cascade"
            break
        if i == n - 1:
            break
        try:
            x_next = simulate_period(x, u, k, wind, params, coeffs, ts, PLANT_SUBSTEPS)
            s = advance_arclength(s, x, k, ts)
        except SingularGeometry as exc:
            out.status, out.reason = "aborted", str(exc)
            break
        x = x_next
        u_prev = np.array(u)
        prev = sol
        if (not all(math.isfinite(v) for v in x) or abs(x.ye) > DIVERGENCE_YE
                or abs(x.theta_e) > DIVERGENCE_THETA):
            out.status, out.reason = "aborted", f"diverged at t={t + ts:.3f}"
            break
    return out


@dataclass
class Metrics:
    rmse_ye: float
    rmse_theta_e: float
    rmse_vx: float
    max_abs_ye: float
    max_abs_theta_e: float
    max_abs_vx_err: float
    mean_solve_time: float
    max_solve_time: float
    constraint_violations: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _rmse(e) -> float:
    return float(np.sqrt(np.mean(np.square(e))))


def compute_metrics(log_: RunLog, mpc: Optional[MpcConfig] = None) -> Metrics:
    """Tracking RMSEs against the logged references and hard-bound violations."""
    if not len(log_):
        raise EmptyLog("cannot compute metrics of an empty log")
    mpc = mpc or MpcConfig()
    ye, th = log_.column("ye"), log_.column("theta_e")
    ev = log_.column("vx") - log_.column("v_ref")
    st = log_.column("solve_time")
    u = np.column_stack([log_.column("delta"), log_.column("ax")])
    du = np.column_stack([log_.column("ddelta"), log_.column("dax")])
    bad = ((u < np.array(mpc.u_min) - BOUND_TOL) | (u > np.array(mpc.u_max) + BOUND_TOL)
           | (du < np.array(mpc.du_min) - BOUND_TOL) | (du > np.array(mpc.du_max) + BOUND_TOL))
    return Metrics(
        rmse_ye=_rmse(ye), rmse_theta_e=_rmse(th), rmse_vx=_rmse(ev),
        max_abs_ye=float(np.max(np.abs(ye))), max_abs_theta_e=float(np.max(np.abs(th))),
        max_abs_vx_err=float(np.max(np.abs(ev))),
        mean_solve_time=float(np.mean(st)), max_solve_time=float(np.max(st)),
        constraint_violations=int(np.count_nonzero(bad.any(axis=1))),
    )


def export_csv(log_: RunLog, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in log_.records:
            w.writerow([str(v) if isinstance(v, int) else repr(float(v)) for v in r])


def import_csv(path) -> RunLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header")
        records = []
        for row in reader:
            if not row:
                continue
            vals = [float(v) for v in row]
            vals[CSV_HEADER.index("qp_iters")] = int(vals[CSV_HEADER.index("qp_iters")])
            records.append(LogRecord(*vals))
    return RunLog(records)
