"""Nonlinear single-track vehicle with Pacejka lateral tires and path-frame errors.

State ``x = [vx, vy, omega, ye, theta_e]`` (body velocities, yaw rate, lateral
and heading error w.r.t. the reference path), input ``u = [delta, ax]``.
Everything here works on plain floats for speed: the closed loop calls
:func:`plant_derivative` forty times per control period.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

from .errors import ConfigError, SingularGeometry

V_STOP = 0.1  # below this speed the drag force is zero
GEOMETRY_GUARD = 1e-6


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters (SI). Defaults describe a Renault Zoe sized car."""

    m: float = 1575.0
    I: float = 2875.0
    lf: float = 1.2
    lr: float = 1.6
    Cd: float = 0.29
    A: float = 1.6
    rho: float = 1.225
    mu: float = 0.82
    g: float = 9.81
    eps: float = 1e-3

    def __post_init__(self):
        for name in ("m", "I", "lf", "lr", "rho", "A", "eps", "g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"vehicle.{name} must be positive, got {value!r}")
        if not 0 < self.mu <= 1.5:
            raise ConfigError(f"vehicle.mu must be in (0, 1.5], got {self.mu!r}")
        if self.Cd < 0:
            raise ConfigError("vehicle.Cd must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown vehicle keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PacejkaCoeffs:
    """Magic-formula lateral tire coefficients.

    The peak force per axle is ``D = mu * Fz``; use :meth:`from_vehicle` to get
    the static axle loads for a given car.
    """

    B: float
    C: float
    mu: float
    fz_front: float
    fz_rear: float

    def __post_init__(self):
        if not self.B > 0:
            raise ConfigError("tire.B must be positive")
        if not 1 < self.C < 3:
            raise ConfigError("tire.C must lie in (1, 3)")
        if not (self.mu > 0 and self.fz_front > 0 and self.fz_rear > 0):
            raise ConfigError("tire peak force must be positive")

    @classmethod
    def from_vehicle(cls, params: VehicleParams, B: float = 10.0, C: float = 1.9):
        weight = params.m * params.g
        wheelbase = params.lf + params.lr
        return cls(B=B, C=C, mu=params.mu,
                   fz_front=weight * params.lr / wheelbase,
                   fz_rear=weight * params.lf / wheelbase)

    @property
    def d_front(self) -> float:
        return self.mu * self.fz_front

    @property
    def d_rear(self) -> float:
        return self.mu * self.fz_rear

    def peak(self, axle: str) -> float:
        if axle == "front":
            return self.d_front
        if axle == "rear":
            return self.d_rear
        raise ValueError(f"axle must be 'front' or 'rear', got {axle!r}")

    def slope(self, axle: str) -> float:
        """Small-angle cornering stiffness ``B*C*D`` (N/rad)."""
        return self.B * self.C * self.peak(axle)

    def to_dict(self) -> dict:
        return {"B": self.B, "C": self.C, "fz_front": self.fz_front, "fz_rear": self.fz_rear}


def tire_from_dict(data: dict | None, params: VehicleParams) -> PacejkaCoeffs:
    data = dict(data or {})
    unknown = set(data) - {"B", "C", "fz_front", "fz_rear"}
    if unknown:
        raise ConfigError(f"unknown tire keys: {sorted(unknown)}")
    base = PacejkaCoeffs.from_vehicle(params, B=float(data.get("B", 10.0)),
                                      C=float(data.get("C", 1.9)))
    return PacejkaCoeffs(B=base.B, C=base.C, mu=params.mu,
                         fz_front=float(data.get("fz_front", base.fz_front)),
                         fz_rear=float(data.get("fz_rear", base.fz_rear)))


class VehicleState(NamedTuple):
    vx: float
    vy: float
    omega: float
    ye: float
    theta_e: float


class ControlInput(NamedTuple):
    delta: float
    ax: float


def slip_angles(state, delta: float, params: VehicleParams) -> tuple[float, float]:
    vx, vy, omega = state[0], state[1], state[2]
    denom = vx + params.eps
    alpha_f = delta - math.atan((vy + params.lf * omega) / denom)
    alpha_r = -math.atan((vy - params.lr * omega) / denom)
    return alpha_f, alpha_r


def pacejka_force(alpha: float, coeffs: PacejkaCoeffs, axle: str = "front") -> float:
    d = coeffs.peak(axle)
    return d * math.sin(coeffs.C * math.atan(coeffs.B * alpha))


def drag_force(vx: float, wind_speed: float, params: VehicleParams) -> float:
    """Rolling plus aerodynamic drag; ``wind_speed`` is a headwind."""
    if vx < V_STOP:
        return 0.0
    airspeed = vx + wind_speed
    aero = 0.5 * params.rho * params.Cd * params.A * airspeed * abs(airspeed)
    return params.mu * params.m * params.g + aero


def plant_derivative(state, u, k: float, wind: float, params: VehicleParams,
                     coeffs: PacejkaCoeffs) -> tuple[float, float, float, float, float]:
    vx, vy, omega, ye, theta_e = state
    delta, ax = u
    denom = 1.0 - ye * k
    if abs(denom) <= GEOMETRY_GUARD:
        raise SingularGeometry(f"1 - ye*k = {denom:.3e} (ye={ye}, k={k})")

    alpha_f, alpha_r = slip_angles(state, delta, params)
    fyf = coeffs.d_front * math.sin(coeffs.C * math.atan(coeffs.B * alpha_f))
    fyr = coeffs.d_rear * math.sin(coeffs.C * math.atan(coeffs.B * alpha_r))
    fd = drag_force(vx, wind, params)
    sd, cd = math.sin(delta), math.cos(delta)
    st, ct = math.sin(theta_e), math.cos(theta_e)

    dvx = ax + omega * vy - (fyf * sd + fd) / params.m
    dvy = (fyf * cd + fyr) / params.m - omega * vx
    domega = (fyf * params.lf * cd - fyr * params.lr) / params.I
    dye = vx * st + vy * ct
    dtheta = omega - k * (vx * ct - vy * st) / denom
    return dvx, dvy, domega, dye, dtheta


def step_rk4(state, u, k: float, wind: float, params: VehicleParams,
             coeffs: PacejkaCoeffs, dt: float) -> VehicleState:
    """One classical Runge-Kutta step with inputs held constant; vx floored at 0."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = tuple(state)
    k1 = plant_derivative(x, u, k, wind, params, coeffs)
    x2 = tuple(a + 0.5 * dt * b for a, b in zip(x, k1))
    k2 = plant_derivative(x2, u, k, wind, params, coeffs)
    x3 = tuple(a + 0.5 * dt * b for a, b in zip(x, k2))
    k3 = plant_derivative(x3, u, k, wind, params, coeffs)
    x4 = tuple(a + dt * b for a, b in zip(x, k3))
    k4 = plant_derivative(x4, u, k, wind, params, coeffs)
    out = [a + dt / 6.0 * (b + 2.0 * c + 2.0 * d + e)
           for a, b, c, d, e in zip(x, k1, k2, k3, k4)]
    out[0] = max(out[0], 0.0)
    return VehicleState(*out)


def simulate_period(state, u, k, wind, params, coeffs, ts: float,
                    substeps: int = 10) -> VehicleState:
    """Advance the plant over one control period with zero-order-hold inputs."""
    dt = ts / substeps
    for _ in range(substeps):
        state = step_rk4(state, u, k, wind, params, coeffs, dt)
    return state
