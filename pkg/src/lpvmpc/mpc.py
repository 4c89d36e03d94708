"""Receding-horizon LPV-MPC over input increments.

Decision vector ``z = [du_0, ..., du_{Np-1}, s]`` where ``s >= 0`` softens the
lateral-error bound. States are eliminated (condensed) using the Euler
discretised LPV models, one per prediction step.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, InfeasibleBounds
from .lpv import NU, NX, DiscreteModel, StiffnessPair, build_lpv, discretize_euler, schedule_horizon
from .qp import QpProblem, solve_qp
from .vehicle import ControlInput, VehicleParams

YE = 3  # index of the lateral error in the state vector


@dataclass
class MpcConfig:
    Np: int = 10
    Ts: float = 0.033
    q_diag: Sequence[float] = (1.0, 0.001, 0.01, 10.0, 1.0)
    r_diag: Sequence[float] = (0.001, 0.001)
    u_min: Sequence[float] = (-math.pi / 6, -3.0)
    u_max: Sequence[float] = (math.pi / 6, 15.0)
    du_min: Sequence[float] = (-math.pi / 12, -1.0)
    du_max: Sequence[float] = (math.pi / 12, 1.0)
    ye_bound: float = 0.3
    slack_weight: float = 1e4
    qp_tol: float = 1e-6
    qp_max_iter: int = 4000

    def __post_init__(self):
        self.Np = int(self.Np)
        self.Ts = float(self.Ts)
        for name, size in (("q_diag", NX), ("r_diag", NU), ("u_min", NU), ("u_max", NU),
                           ("du_min", NU), ("du_max", NU)):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != size:
                raise ConfigError(f"mpc.{name} needs {size} entries, got {len(value)}")
            setattr(self, name, value)
        if self.Np < 1:
            raise ConfigError("mpc.Np must be >= 1")
        if not self.Ts > 0:
            raise ConfigError("mpc.Ts must be positive")
        if min(self.q_diag) < 0 or min(self.r_diag) < 0:
            raise ConfigError("mpc weights must be non-negative")
        if any(lo >= hi for lo, hi in zip(self.u_min, self.u_max)):
            raise InfeasibleBounds("mpc.u_min must be below mpc.u_max")
        if any(lo >= hi for lo, hi in zip(self.du_min, self.du_max)):
            raise InfeasibleBounds("mpc.du_min must be below mpc.du_max")
        if any(lo > 0 or hi < 0 for lo, hi in zip(self.du_min, self.du_max)):
            raise ConfigError("increment bounds must contain zero")
        if not self.slack_weight > 0 or not self.ye_bound > 0:
            raise ConfigError("mpc.slack_weight and mpc.ye_bound must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "MpcConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown mpc keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


class ReferenceWindow(NamedTuple):
    """Speed reference and road curvature for the ``Np`` prediction steps.

    Row ``i`` holds the target for predicted state ``x_{i+1}`` and the
    curvature that schedules the model of step ``i``.
    """

    v_ref: np.ndarray
    curvature: np.ndarray

    def targets(self) -> np.ndarray:
        v = np.asarray(self.v_ref, dtype=float)
        r = np.zeros((len(v), NX))
        r[:, 0] = v
        r[:, 2] = v * np.asarray(self.curvature, dtype=float)
        return r


@dataclass
class MpcSolution:
    u0: ControlInput
    delta_u_sequence: np.ndarray
    inputs: np.ndarray
    predicted_states: np.ndarray
    qp_iterations: int
    solve_time: float
    status: str
    slack: float = 0.0
    objective: float = field(default=0.0, repr=False)


def increment_map(Np: int) -> np.ndarray:
    """``T`` with ``U = 1 (x) u_prev + T dU`` (block lower-triangular identities)."""
    return np.kron(np.tril(np.ones((Np, Np))), np.eye(NU))


def prediction_matrices(models: Sequence[DiscreteModel], x0, u_prev):
    """Affine map ``X = c + S dU`` for the stacked predicted states ``x_1..x_Np``."""
    Np = len(models)
    T = increment_map(Np)
    c = np.empty((Np, NX))
    S = np.empty((Np, NX, NU * Np))
    ci = np.asarray(x0, dtype=float)
    Si = np.zeros((NX, NU * Np))
    u_prev = np.asarray(u_prev, dtype=float)
    for i, model in enumerate(models):
        ci = model.Ad @ ci + model.Bd @ u_prev
        Si = model.Ad @ Si + model.Bd @ T[NU * i:NU * (i + 1)]
        c[i] = ci
        S[i] = Si
    return c, S


def condense(models: Sequence[DiscreteModel], x0, refs: ReferenceWindow, u_prev,
             cfg: MpcConfig) -> QpProblem:
    Np = cfg.Np
    if len(models) != Np or len(refs.v_ref) != Np or len(refs.curvature) != Np:
        raise DimensionMismatch(f"expected {Np} models and reference rows")
    nz = NU * Np + 1
    c, S = prediction_matrices(models, x0, u_prev)
    Sf = S.reshape(Np * NX, NU * Np)
    err0 = (refs.targets() - c).ravel()
    wq = np.tile(cfg.q_diag, Np)
    wr = np.tile(cfg.r_diag, Np)

    H = np.zeros((nz, nz))
    H[:-1, :-1] = 2.0 * (Sf.T @ (wq[:, None] * Sf))
    H[:-1, :-1][np.diag_indices(NU * Np)] += 2.0 * wr
    H[-1, -1] = 2.0 * cfg.slack_weight
    H = 0.5 * (H + H.T)
    f = np.zeros(nz)
    f[:-1] = -2.0 * Sf.T @ (wq * err0)

    T = increment_map(Np)
    I = np.eye(NU * Np)
    u_prev = np.asarray(u_prev, dtype=float)
    Sye = S[:, YE, :]
    cye = c[:, YE]
    zeros = np.zeros((NU * Np, 1))
    ones = np.ones((Np, 1))
    G = np.vstack([
        np.hstack([T, zeros]),
        np.hstack([-T, zeros]),
        np.hstack([I, zeros]),
        np.hstack([-I, zeros]),
        np.hstack([Sye, -ones]),
        np.hstack([-Sye, -ones]),
        np.eye(1, nz, nz - 1) * -1.0,
    ])
    h = np.concatenate([
        np.tile(np.subtract(cfg.u_max, u_prev), Np),
        np.tile(np.subtract(u_prev, cfg.u_min), Np),
        np.tile(cfg.du_max, Np),
        -np.tile(cfg.du_min, Np),
        cfg.ye_bound - cye,
        cfg.ye_bound + cye,
        [0.0],
    ])
    return QpProblem(H, f, G, h)


def rollout(models: Sequence[DiscreteModel], x0, inputs) -> np.ndarray:
    xs = np.empty((len(models) + 1, NX))
    xs[0] = x0
    for i, model in enumerate(models):
        xs[i + 1] = model.Ad @ xs[i] + model.Bd @ inputs[i]
    return xs


def mpc_step(x, stiff: StiffnessPair, refs: ReferenceWindow, u_prev,
             prev: Optional[MpcSolution], cfg: MpcConfig, params: VehicleParams) -> MpcSolution:
    """One receding-horizon update; returns the first input of the optimal plan."""
    t0 = time.perf_counter()
    Np = cfg.Np
    u_prev = np.clip(np.asarray(u_prev, dtype=float), cfg.u_min, cfg.u_max)
    psis = schedule_horizon(
        x, refs.curvature, Np,
        None if prev is None else prev.predicted_states,
        None if prev is None else prev.inputs)
    models = [discretize_euler(build_lpv(psi, stiff, params), cfg.Ts) for psi in psis]
    qp = condense(models, x, refs, u_prev, cfg)

    res = solve_qp(qp, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)

    du = res.z[:-1].reshape(Np, NU)
    du = np.clip(du, cfg.du_min, cfg.du_max)
    inputs = u_prev + np.cumsum(du, axis=0)
    u0 = np.clip(inputs[0], cfg.u_min, cfg.u_max)
    du[0] = u0 - u_prev
    inputs = np.clip(inputs, cfg.u_min, cfg.u_max)
    states = rollout(models, x, inputs)
    return MpcSolution(
        u0=ControlInput(float(u0[0]), float(u0[1])),
        delta_u_sequence=du,
        inputs=inputs,
        predicted_states=states,
        qp_iterations=res.iterations,
        solve_time=time.perf_counter() - t0,
        status=res.status,
        slack=max(float(res.z[-1]), 0.0),
        objective=float(0.5 * res.z @ qp.H @ res.z + qp.f @ res.z),
    )
