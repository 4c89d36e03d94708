"""Quasi-LPV prediction model ``xdot = A(psi) x + B(psi) u``.

The factorisation is exact for a linear tire (``Fy = C * alpha`` with
``alpha_f = delta - (vy + lf*omega)/vx``, ``alpha_r = -(vy - lr*omega)/vx``)
and the rolling/aero drag of the plant without wind.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DegenerateScheduling
from .vehicle import GEOMETRY_GUARD, VehicleParams

V_MIN = 0.1
STIFFNESS_MIN = 1e4
STIFFNESS_MAX = 2e5

NX = 5
NU = 2


class SchedulingVector(NamedTuple):
    delta: float
    vx: float
    vy: float
    theta_e: float
    ye: float
    k: float


class StiffnessPair(NamedTuple):
    cf: float
    cr: float

    def clamped(self) -> "StiffnessPair":
        return StiffnessPair(min(max(self.cf, STIFFNESS_MIN), STIFFNESS_MAX),
                             min(max(self.cr, STIFFNESS_MIN), STIFFNESS_MAX))


class LpvMatrices(NamedTuple):
    A: np.ndarray
    B: np.ndarray


class DiscreteModel(NamedTuple):
    Ad: np.ndarray
    Bd: np.ndarray
    Ts: float


def build_lpv(psi: SchedulingVector, stiff: StiffnessPair,
              params: VehicleParams) -> LpvMatrices:
    delta, vx, vy, theta_e, ye, k = psi
    if not all(math.isfinite(v) for v in psi):
        raise DegenerateScheduling(f"non-finite scheduling vector {psi}")
    denom = 1.0 - ye * k
    if abs(denom) <= GEOMETRY_GUARD:
        raise DegenerateScheduling(f"1 - ye*k = {denom:.3e}")
    vx = max(vx, V_MIN)
    cf, cr = stiff
    m, inertia, lf, lr = params.m, params.I, params.lf, params.lr
    sd, cd = math.sin(delta), math.cos(delta)
    st, ct = math.sin(theta_e), math.cos(theta_e)

    A = np.zeros((NX, NX))
    A[0, 0] = -params.mu * params.g / vx - params.rho * params.Cd * params.A * vx / (2 * m)
    A[0, 1] = cf * sd / (m * vx)
    A[0, 2] = cf * lf * sd / (m * vx) + vy
    A[1, 1] = -(cr + cf * cd) / (m * vx)
    A[1, 2] = -(cf * lf * cd - cr * lr) / (m * vx) - vx
    A[2, 1] = -(cf * lf * cd - cr * lr) / (inertia * vx)
    A[2, 2] = -(cf * lf * lf * cd + cr * lr * lr) / (inertia * vx)
    A[3, 0] = st
    A[3, 1] = ct
    A[4, 0] = -k * ct / denom
    A[4, 1] = k * st / denom
    A[4, 2] = 1.0

    B = np.zeros((NX, NU))
    B[0, 0] = -cf * sd / m
    B[0, 1] = 1.0
    B[1, 0] = cf * cd / m
    B[2, 0] = cf * lf * cd / inertia
    return LpvMatrices(A, B)


def discretize_euler(mats: LpvMatrices, Ts: float) -> DiscreteModel:
    if not Ts > 0:
        raise ValueError("Ts must be positive")
    return DiscreteModel(np.eye(mats.A.shape[0]) + mats.A * Ts, mats.B * Ts, Ts)


def schedule_horizon(x0, curvature, Np: int, prev_states=None, prev_inputs=None):
    """Scheduling vectors for the ``Np`` prediction steps.

    With a previous solution, step ``i`` is scheduled on the previously
    predicted state ``i+1`` and input ``i+1`` (last input repeated). Without
    one, the measured state with ``delta = 0`` is used for every step.
    ``curvature[i]`` is the road curvature for step ``i``.
    """
    if prev_states is None:
        vx, vy, _, ye, theta_e = (float(v) for v in x0)
        return [SchedulingVector(0.0, vx, vy, theta_e, ye, float(curvature[i]))
                for i in range(Np)]
    prev_states = np.asarray(prev_states)
    prev_inputs = np.asarray(prev_inputs)
    if len(prev_states) < Np + 1 or len(prev_inputs) < Np:
        raise ValueError("previous solution is shorter than the horizon")
    out = []
    for i in range(Np):
        xs = prev_states[i + 1]
        delta = prev_inputs[min(i + 1, len(prev_inputs) - 1), 0]
        out.append(SchedulingVector(float(delta), float(xs[0]), float(xs[1]),
                                    float(xs[4]), float(xs[3]), float(curvature[i])))
    return out


def linear_tire_derivative(x, u, k: float, cf: float, cr: float,
                           params: VehicleParams) -> np.ndarray:
    """Plant equations with linear tires, no wind, no standstill rule.

    Reference for the LPV factorisation; ``vx`` must be positive.
    """
    vx, vy, omega, ye, theta_e = (float(v) for v in x)
    delta, ax = (float(v) for v in u)
    alpha_f = delta - (vy + params.lf * omega) / vx
    alpha_r = -(vy - params.lr * omega) / vx
    fyf, fyr = cf * alpha_f, cr * alpha_r
    fd = params.mu * params.m * params.g + 0.5 * params.rho * params.Cd * params.A * vx * vx
    return np.array([
        ax + omega * vy - (fyf * math.sin(delta) + fd) / params.m,
        (fyf * math.cos(delta) + fyr) / params.m - omega * vx,
        (fyf * params.lf * math.cos(delta) - fyr * params.lr) / params.I,
        vx * math.sin(theta_e) + vy * math.cos(theta_e),
        omega - k * (vx * math.cos(theta_e) - vy * math.sin(theta_e)) / (1.0 - ye * k),
    ])
