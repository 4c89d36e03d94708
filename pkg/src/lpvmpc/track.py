"""Road curvature, speed profile and wind disturbance for closed-loop runs."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, SingularGeometry
from .vehicle import GEOMETRY_GUARD

SPEED_RANGE = (5.0, 21.0)
WIND_RANGE = (25.0, 50.0)


class Segment(NamedTuple):
    kind: str
    length: float
    curvature: float = 0.0


def straight(length: float) -> Segment:
    return Segment("straight", float(length), 0.0)


def arc(radius: float, angle_deg: float) -> Segment:
    """Circular arc; a negative angle turns right."""
    angle = math.radians(angle_deg)
    return Segment("arc", abs(radius * angle), math.copysign(1.0 / radius, angle))


@dataclass(frozen=True)
class TrackSpec:
    segments: tuple
    ye_bound: float = 0.3

    def __post_init__(self):
        segs = tuple(Segment(*s) if not isinstance(s, Segment) else s for s in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ConfigError("track needs at least one segment")
        for seg in segs:
            if seg.kind not in ("straight", "arc"):
                raise ConfigError(f"unknown segment kind {seg.kind!r}")
            if not seg.length > 0:
                raise ConfigError("segment lengths must be positive")
            if seg.kind == "straight" and seg.curvature != 0.0:
                raise ConfigError("straight segments have zero curvature")
            if abs(seg.curvature) * self.ye_bound >= 1.0:
                raise ConfigError(f"curvature {seg.curvature} too tight for ye bound")
        object.__setattr__(self, "_ends", tuple(np.cumsum([s.length for s in segs]).tolist()))

    @property
    def total_length(self) -> float:
        return self._ends[-1]

    @classmethod
    def from_dict(cls, data) -> "TrackSpec":
        if isinstance(data, dict):
            segs = data.get("segments", [])
        else:
            segs = data
        out = []
        for s in segs:
            if "radius" in s:
                out.append(arc(s["radius"], s["angle_deg"]))
            elif s.get("kind", "straight") == "straight":
                out.append(straight(s["length"]))
            else:
                out.append(Segment("arc", float(s["length"]), float(s["curvature"])))
        return cls(tuple(out))

    def to_dict(self) -> dict:
        return {"segments": [s._asdict() for s in self.segments]}


def desk_track_v1() -> TrackSpec:
    return TrackSpec((
        straight(150.0),
        arc(40.0, 90.0),
        straight(80.0),
        arc(25.0, -180.0),
        straight(100.0),
        arc(60.0, 120.0),
        straight(120.0),
    ))


def curvature_at(track: TrackSpec, s: float) -> float:
    s = min(max(s, 0.0), track.total_length)
    idx = bisect.bisect_left(track._ends, s)
    return track.segments[min(idx, len(track.segments) - 1)].curvature


@dataclass(frozen=True)
class SpeedProfile:
    knots: tuple  # ((s, v), ...)

    def __post_init__(self):
        knots = tuple((float(s), float(v)) for s, v in self.knots)
        object.__setattr__(self, "knots", knots)
        if not knots:
            raise ConfigError("speed profile needs knots")
        ss = [k[0] for k in knots]
        if any(b <= a for a, b in zip(ss, ss[1:])):
            raise ConfigError("speed knots must be strictly increasing in s")
        lo, hi = SPEED_RANGE
        if any(not lo <= v <= hi for _, v in knots):
            raise ConfigError(f"speed knots must lie within [{lo}, {hi}] m/s")
        object.__setattr__(self, "_s", np.array(ss))
        object.__setattr__(self, "_v", np.array([k[1] for k in knots]))

    @classmethod
    def from_dict(cls, data) -> "SpeedProfile":
        knots = data["knots"] if isinstance(data, dict) else data
        return cls(tuple(tuple(k) for k in knots))

    def to_dict(self) -> dict:
        return {"knots": [list(k) for k in self.knots]}


def desk_speed_v1() -> SpeedProfile:
    return SpeedProfile((
        (0.0, 18.0), (40.0, 21.0), (95.0, 21.0), (145.0, 12.0), (215.0, 12.0),
        (235.0, 15.0), (250.0, 15.0), (285.0, 7.0), (375.0, 7.0), (430.0, 19.0),
        (445.0, 19.0), (468.0, 15.0), (600.0, 15.0), (650.0, 21.0), (720.0, 21.0),
    ))


def speed_at(profile: SpeedProfile, s: float) -> float:
    return float(np.interp(s, profile._s, profile._v))


@dataclass(frozen=True)
class WindProfile:
    """Headwind ``base + amplitude*sin(2 pi t / period) + noise``, clipped."""

    base: float = 37.5
    amplitude: float = 12.5
    period: float = 20.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.period > 0 or self.noise_std < 0:
            raise ConfigError("wind period must be positive and noise_std non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "WindProfile":
        unknown = set(data) - {"base", "amplitude", "period", "noise_std", "seed"}
        if unknown:
            raise ConfigError(f"unknown wind keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {"base": self.base, "amplitude": self.amplitude, "period": self.period,
                "noise_std": self.noise_std, "seed": self.seed}


def wind_at(profile: WindProfile | None, t: float) -> float:
    if profile is None:
        return 0.0
    w = profile.base + profile.amplitude * math.sin(2.0 * math.pi * t / profile.period)
    if profile.noise_std > 0:
        # one reproducible draw per microsecond tick, independent of query order
        tick = int(round(t * 1e6))
        w += profile.noise_std * float(np.random.default_rng([profile.seed, tick]).standard_normal())
    return min(max(w, WIND_RANGE[0]), WIND_RANGE[1])


def advance_arclength(s: float, state, k: float, dt: float) -> float:
    vx, vy, _, ye, theta_e = state[:5]
    denom = 1.0 - ye * k
    if abs(denom) <= GEOMETRY_GUARD:
        raise SingularGeometry(f"1 - ye*k = {denom:.3e}")
    return s + dt * (vx * math.cos(theta_e) - vy * math.sin(theta_e)) / denom
