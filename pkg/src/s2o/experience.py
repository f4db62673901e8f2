"""Time efficiency, ride comfort and energy consumption factor models.

All three produce raw scores where higher means worse, averaged over the
case with the trapezoid rule. The scalar forms and the vectorised forms
use the same arithmetic expressions term by term so the streaming
evaluator and the batch scorers agree to the last bit.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .kinematics import CaseTable
from .numerics import trapezoid_mean
from .types import DrivingCase, RoadContext, RoadSection, wrap_angle

OVERSPEED_FREE_LIMIT = 1.2  # no penalty up to 20% above the limit
OVERSPEED_SLOPE = 10.0 / 3.0  # ramp reaching 1 at 1.5x the limit


def instantaneous_efficiency(speed: float, v_lim: float) -> float:
    """Deviation-from-limit penalty in [0, 1]; 0 while riding the limit band.

    Below the limit the penalty is the unused fraction of the limit; the
    band [v_lim, 1.2 v_lim] is free; above it an affine ramp rises from 0
    at 1.2 v_lim to 1 at 1.5 v_lim and saturates there.
    """
    if v_lim <= 0:
        raise ValidationError(f"speed limit must be > 0, got {v_lim}")
    ratio = speed / v_lim
    if ratio < 1.0:
        return 1.0 - ratio
    if ratio <= OVERSPEED_FREE_LIMIT:
        return 0.0
    return min(1.0, OVERSPEED_SLOPE * ratio - 4.0)


def efficiency_series(speed: np.ndarray, v_lim: np.ndarray) -> np.ndarray:
    if (v_lim <= 0).any():
        raise ValidationError("speed limit must be > 0")
    ratio = speed / v_lim
    under = 1.0 - ratio
    over = np.minimum(1.0, OVERSPEED_SLOPE * ratio - 4.0)
    return np.where(ratio < 1.0, under, np.where(ratio <= OVERSPEED_FREE_LIMIT, 0.0, over))


def _limits_for(table: CaseTable, road: RoadContext) -> np.ndarray:
    cache: dict[RoadSection, float] = {}
    out = np.empty(len(table.sections))
    for i, sec in enumerate(table.sections):
        lim = cache.get(sec)
        if lim is None:
            lim = road.speed_limit_mps(sec)
            cache[sec] = lim
        out[i] = lim
    return out


def efficiency_score(case: DrivingCase, table: CaseTable | None = None) -> float:
    """Time-averaged deviation-from-limit penalty (0 = rode the limit throughout)."""
    if table is None:
        table = CaseTable(case)
    road = case.frames[0].road
    return trapezoid_mean(efficiency_series(table.speed, _limits_for(table, road)), table.t)


@dataclass(frozen=True)
class ComfortParams:
    jerk_weight: float = 0.5  # weight on squared longitudinal jerk
    u_turn_angle: float = math.radians(150.0)
    u_turn_window: float = 10.0  # s
    u_turn_penalty: float = 5.0
    stop_decel: float = 6.0  # m/s^2, magnitude
    stop_duration: float = 0.3  # s, sustained at least this long
    stop_penalty: float = 5.0

    def __post_init__(self):
        if self.jerk_weight < 0:
            raise ValidationError("jerk_weight must be >= 0")
        if self.u_turn_angle <= 0 or self.u_turn_window <= 0:
            raise ValidationError("u-turn thresholds must be > 0")
        if self.stop_decel <= 0 or self.stop_duration < 0:
            raise ValidationError("emergency-stop thresholds must be positive")
        if self.u_turn_penalty < 0 or self.stop_penalty < 0:
            raise ValidationError("penalties must be >= 0")


class UTurnDetector:
    """Causal scan for heading reversals.

    Fires when the unwrapped heading changes by at least ``angle`` within
    ``window`` seconds; the event covers the frames from the extremum that
    triggered it to the current frame. Events are disjoint: after one
    fires the scan restarts beyond it. When a rising and a falling
    reversal would fire on the same frame the larger swing wins (rising
    on a tie).
    """

    def __init__(self, angle: float, window: float):
        self.angle = angle
        self.window = window
        self.events: list[tuple[int, int]] = []
        self._t: list[float] = []
        self._h: list[float] = []
        self._raw_prev = math.nan
        self._minq: deque[int] = deque()
        self._maxq: deque[int] = deque()

    def feed(self, t: float, heading: float) -> None:
        i = len(self._t)
        h = heading if i == 0 else self._h[-1] + wrap_angle(heading - self._raw_prev)
        self._raw_prev = heading
        self._t.append(t)
        self._h.append(h)

        minq, maxq = self._minq, self._maxq
        while minq and t - self._t[minq[0]] > self.window:
            minq.popleft()
        while maxq and t - self._t[maxq[0]] > self.window:
            maxq.popleft()
        rise = h - self._h[minq[0]] if minq else 0.0
        fall = self._h[maxq[0]] - h if maxq else 0.0
        if max(rise, fall) >= self.angle:
            start = minq[0] if rise >= fall else maxq[0]
            self.events.append((start, i))
            minq.clear()
            maxq.clear()
            return
        while minq and self._h[minq[-1]] >= h:
            minq.pop()
        minq.append(i)
        while maxq and self._h[maxq[-1]] <= h:
            maxq.pop()
        maxq.append(i)


class EmergencyStopDetector:
    """Causal scan for braking runs: accel <= -decel sustained >= duration.

    A run is a maximal stretch of consecutive frames at or below the
    deceleration threshold; it becomes an event when its time extent
    reaches the minimum duration. ``finish`` closes a run still open at
    the end of the series.
    """

    def __init__(self, decel: float, duration: float):
        self.decel = decel
        self.duration = duration
        self.events: list[tuple[int, int]] = []
        self._start_idx: int | None = None
        self._start_t = math.nan
        self._last_idx = -1
        self._last_t = math.nan
        self._n = 0

    def feed(self, t: float, accel_long: float) -> None:
        i = self._n
        self._n += 1
        if accel_long <= -self.decel:
            if self._start_idx is None:
                self._start_idx = i
                self._start_t = t
            self._last_idx = i
            self._last_t = t
        else:
            self._close()

    def _close(self) -> None:
        if self._start_idx is not None and self._last_t - self._start_t >= self.duration:
            self.events.append((self._start_idx, self._last_idx))
        self._start_idx = None

    def finish(self) -> None:
        self._close()

    def snapshot(self) -> "EmergencyStopDetector":
        """Cheap copy for look-ahead feeds over provisional samples."""
        c = EmergencyStopDetector(self.decel, self.duration)
        c.events = list(self.events)
        c._start_idx = self._start_idx
        c._start_t = self._start_t
        c._last_idx = self._last_idx
        c._last_t = self._last_t
        c._n = self._n
        return c


def detect_u_turns(times, headings, cp: ComfortParams) -> list[tuple[int, int]]:
    det = UTurnDetector(cp.u_turn_angle, cp.u_turn_window)
    for t, h in zip(times, headings):
        det.feed(float(t), float(h))
    return det.events


def detect_emergency_stops(times, accel_long, cp: ComfortParams) -> list[tuple[int, int]]:
    det = EmergencyStopDetector(cp.stop_decel, cp.stop_duration)
    for t, a in zip(times, accel_long):
        det.feed(float(t), float(a))
    det.finish()
    return det.events


def unpleasant_motion_loss(case: DrivingCase, cp: ComfortParams, table: CaseTable | None = None) -> np.ndarray:
    """Per-frame penalty series for U-turns and emergency stops.

    Each detected event adds its penalty to every frame of its detection
    window; overlapping windows of the two kinds accumulate.
    """
    if table is None:
        table = CaseTable(case)
    n = len(table.t)
    loss = np.zeros(n)
    for a, b in detect_u_turns(table.t, table.heading, cp):
        loss[a : b + 1] += cp.u_turn_penalty
    for a, b in detect_emergency_stops(table.t, table.accel_long, cp):
        loss[a : b + 1] += cp.stop_penalty
    return loss


def instantaneous_comfort(yaw_rate: float, speed: float, jerk: float, loss: float, cp: ComfortParams) -> float:
    """Discomfort at one instant: swing term + squared jerk + event loss."""
    return abs(yaw_rate) * speed + cp.jerk_weight * (jerk * jerk) + loss


def comfort_score(case: DrivingCase, cp: ComfortParams, table: CaseTable | None = None) -> float:
    """Time-averaged discomfort (0 = perfectly smooth, no events)."""
    if table is None:
        table = CaseTable(case)
    loss = unpleasant_motion_loss(case, cp, table)
    series = np.abs(table.yaw_rate) * table.speed + cp.jerk_weight * (
        table.jerk_long * table.jerk_long
    ) + loss
    return trapezoid_mean(series, table.t)


@dataclass(frozen=True)
class VehicleParams:
    """Ego drivetrain and body constants for the energy model."""

    mass: float = 1500.0  # kg, fallback when a log omits ego mass
    rot_mass_coeff: float = 1.1  # rotating-mass correction on acceleration power
    drag_coeff: float = 0.30
    frontal_area: float = 2.0  # m^2
    gravity: float = 9.81  # m/s^2

    def __post_init__(self):
        for name in ("mass", "rot_mass_coeff", "drag_coeff", "frontal_area", "gravity"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")


@dataclass(frozen=True)
class PowerBreakdown:
    accel: float  # kW, negative while braking
    wind: float
    grade: float
    roll: float

    @property
    def total(self) -> float:
        return self.accel + self.wind + self.grade + self.roll


WIND_POWER_DENOM = 76140.0


def _power_terms(speed, accel_long, mass, vp: VehicleParams, road: RoadContext):
    """Power terms in kW; works elementwise on scalars and arrays alike."""
    u_a = 3.6 * speed  # km/h
    p_accel = vp.rot_mass_coeff * mass * u_a / 3600.0 * accel_long
    p_wind = vp.drag_coeff * vp.frontal_area * (u_a * u_a * u_a) / WIND_POWER_DENOM
    p_grade = mass * vp.gravity * road.gradient * u_a / 3600.0
    p_roll = mass * vp.gravity * road.rolling_coeff * u_a / 3600.0
    return p_accel, p_wind, p_grade, p_roll


def power_breakdown(ego, vp: VehicleParams, road: RoadContext) -> PowerBreakdown:
    """Instantaneous drivetrain power demand of the ego vehicle, kW.

    Mass comes from the ego state (the actual vehicle); requires derived
    kinematics. The acceleration term may be negative under braking and
    is kept so recuperation shows up as net-negative demand.
    """
    if math.isnan(ego.accel_long):
        raise ValidationError("ego kinematics not derived; run derive_kinematics first")
    pa, pw, pg, pr = _power_terms(ego.speed, ego.accel_long, ego.mass, vp, road)
    return PowerBreakdown(accel=float(pa), wind=float(pw), grade=float(pg), roll=float(pr))


def energy_score(case: DrivingCase, vp: VehicleParams, table: CaseTable | None = None) -> float:
    """Time-averaged total power demand, kW (net-negative stays negative)."""
    if table is None:
        table = CaseTable(case)
    road = case.frames[0].road
    pa, pw, pg, pr = _power_terms(table.speed, table.accel_long, table.ego_mass, vp, road)
    return trapezoid_mean(pa + pw + pg + pr, table.t)
