"""Core data model: agents, frames, cases, road context.

All trajectory data is immutable; derivation steps return new objects.
Angles are radians, positions metres, speeds m/s, masses kg. Speed limits
are stored in km/h because that is how they are posted and configured.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

from .errors import ValidationError


class AgentKind(str, enum.Enum):
    CAR = "car"
    TRUCK = "truck"
    BUS = "bus"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"


class RoadSection(str, enum.Enum):
    URBAN_REGULAR = "urban_regular"
    URBAN_INTERSECTION = "urban_intersection"
    HIGHWAY_SLOW = "highway_slow"
    HIGHWAY_EXPRESS = "highway_express"


class Level(str, enum.Enum):
    """Quality segment of a case, ordered LOW < MID < HIGH."""

    LOW = "low"
    MID = "mid"
    HIGH = "high"

    @property
    def rank(self) -> int:
        return {"low": 0, "mid": 1, "high": 2}[self.value]


LEVELS = (Level.LOW, Level.MID, Level.HIGH)

# Posted limits per section kind, km/h.
DEFAULT_SPEED_LIMITS_KMH: Mapping[RoadSection, float] = {
    RoadSection.URBAN_REGULAR: 60.0,
    RoadSection.URBAN_INTERSECTION: 30.0,
    RoadSection.HIGHWAY_SLOW: 80.0,
    RoadSection.HIGHWAY_EXPRESS: 120.0,
}

# Fallback masses when a log omits them, kg.
DEFAULT_AGENT_MASS_KG: Mapping[AgentKind, float] = {
    AgentKind.CAR: 1500.0,
    AgentKind.TRUCK: 15000.0,
    AgentKind.BUS: 12000.0,
    AgentKind.PEDESTRIAN: 75.0,
    AgentKind.CYCLIST: 90.0,
}

KMH_PER_MPS = 3.6


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class RoadContext:
    """Static road attributes shared by all frames of a case."""

    speed_limits_kmh: Mapping[RoadSection, float] = field(
        default_factory=lambda: dict(DEFAULT_SPEED_LIMITS_KMH)
    )
    gradient: float = 0.0  # rise over run, dimensionless
    rolling_coeff: float = 0.015

    def __post_init__(self):
        if not abs(self.gradient) < 1.0:
            raise ValidationError(f"gradient magnitude must be < 1, got {self.gradient}")
        if self.rolling_coeff < 0.0:
            raise ValidationError(f"rolling_coeff must be >= 0, got {self.rolling_coeff}")
        for sec, lim in self.speed_limits_kmh.items():
            if lim <= 0.0:
                raise ValidationError(f"speed limit for {sec} must be > 0, got {lim}")

    def speed_limit_mps(self, section: RoadSection) -> float:
        try:
            return self.speed_limits_kmh[section] / KMH_PER_MPS
        except KeyError:
            raise ValidationError(f"no speed limit configured for section {section!r}") from None


@dataclass(frozen=True)
class AgentState:
    """One traffic participant at one instant.

    ``v_long`` is the longitudinal speed in the agent's own frame; for
    ordinary forward motion it equals ``speed`` and that is the default.
    """

    agent_id: str
    kind: AgentKind
    x: float
    y: float
    heading: float
    speed: float
    length: float
    width: float
    mass: float
    v_long: Optional[float] = None

    def __post_init__(self):
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValidationError(
                f"agent {self.agent_id!r}: length and width must be > 0 "
                f"(got {self.length} x {self.width})"
            )
        if self.mass <= 0.0:
            raise ValidationError(f"agent {self.agent_id!r}: mass must be > 0, got {self.mass}")
        if not math.isnan(self.speed) and self.speed < 0.0:
            raise ValidationError(f"agent {self.agent_id!r}: speed must be >= 0, got {self.speed}")
        if self.v_long is None:
            object.__setattr__(self, "v_long", self.speed)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.speed * math.cos(self.heading), self.speed * math.sin(self.heading))


@dataclass(frozen=True)
class EgoState:
    """The evaluated vehicle at one instant.

    The derived fields default to NaN and are populated by
    ``derive_kinematics``; scoring requires them to be finite.
    """

    x: float
    y: float
    heading: float
    speed: float
    length: float
    width: float
    mass: float
    section: RoadSection
    v_long: Optional[float] = None
    accel_long: float = math.nan
    accel_lat: float = math.nan
    jerk_long: float = math.nan
    jerk_lat: float = math.nan
    yaw_rate: float = math.nan

    def __post_init__(self):
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValidationError(
                f"ego: length and width must be > 0 (got {self.length} x {self.width})"
            )
        if self.mass <= 0.0:
            raise ValidationError(f"ego: mass must be > 0, got {self.mass}")
        if not math.isnan(self.speed) and self.speed < 0.0:
            raise ValidationError(f"ego: speed must be >= 0, got {self.speed}")
        if self.v_long is None:
            object.__setattr__(self, "v_long", self.speed)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.speed * math.cos(self.heading), self.speed * math.sin(self.heading))

    @property
    def kinematics_derived(self) -> bool:
        return not (
            math.isnan(self.accel_long)
            or math.isnan(self.jerk_long)
            or math.isnan(self.yaw_rate)
        )


@dataclass(frozen=True)
class SceneFrame:
    """Ego plus surrounding agents at one timestamp."""

    t: float
    ego: EgoState
    agents: tuple[AgentState, ...]
    road: RoadContext

    def __post_init__(self):
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate agent ids in frame t={self.t}: {dupes}")


@dataclass(frozen=True)
class CaseMeta:
    scenario_id: str = ""
    driver_id: str = ""
    dt: float = math.nan


@dataclass(frozen=True)
class DrivingCase:
    """A complete recorded manoeuvre: ordered frames plus outcome flag."""

    frames: tuple[SceneFrame, ...]
    crash: bool = False
    meta: CaseMeta = field(default_factory=CaseMeta)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValidationError(f"case has fewer than 2 frames: got {len(self.frames)}")
        times = [f.t for f in self.frames]
        for a, b in zip(times, times[1:]):
            if not b > a:
                raise ValidationError(f"timestamps must strictly increase, got {a} then {b}")
        if math.isnan(self.meta.dt):
            gaps = sorted(b - a for a, b in zip(times, times[1:]))
            mid = len(gaps) // 2
            med = gaps[mid] if len(gaps) % 2 else 0.5 * (gaps[mid - 1] + gaps[mid])
            object.__setattr__(self, "meta", replace(self.meta, dt=med))
        if self.meta.dt <= 0.0:
            raise ValidationError(f"dt must be > 0, got {self.meta.dt}")

    @property
    def duration(self) -> float:
        return self.frames[-1].t - self.frames[0].t

    @property
    def times(self) -> list[float]:
        return [f.t for f in self.frames]


@dataclass(frozen=True)
class RoiSpec:
    """Longitudinal region of interest around the ego, metres."""

    front: float = 100.0
    rear: float = 50.0

    def __post_init__(self):
        if self.front <= 0.0 or self.rear < 0.0:
            raise ValidationError(f"roi must have front > 0 and rear >= 0, got {self}")
