"""Finite differences and trapezoidal time averages.

Both the batch scorers and the streaming evaluator go through the scalar
stencils defined here, so the two paths cannot disagree on formulas.
Interior points use central differences; the first and last samples fall
back to one-sided differences.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ValidationError


def diff_at(values: Sequence[float], times: Sequence[float], i: int) -> float:
    """Derivative of ``values`` at sample ``i`` (central inside, one-sided at the ends)."""
    n = len(values)
    if n < 2:
        raise ValidationError("need at least 2 samples to differentiate")
    if i == 0:
        return (values[1] - values[0]) / (times[1] - times[0])
    if i == n - 1:
        return (values[n - 1] - values[n - 2]) / (times[n - 1] - times[n - 2])
    return (values[i + 1] - values[i - 1]) / (times[i + 1] - times[i - 1])


def diff_series(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Vectorised counterpart of ``diff_at`` over the whole series."""
    n = len(values)
    if n < 2:
        raise ValidationError("need at least 2 samples to differentiate")
    out = np.empty(n, dtype=float)
    out[0] = (values[1] - values[0]) / (times[1] - times[0])
    out[-1] = (values[-1] - values[-2]) / (times[-1] - times[-2])
    if n > 2:
        out[1:-1] = (values[2:] - values[:-2]) / (times[2:] - times[:-2])
    return out


def wrapped_diff_at(angles: Sequence[float], times: Sequence[float], i: int) -> float:
    """Angular rate at sample ``i`` with the difference wrapped to (-pi, pi]."""
    from .types import wrap_angle

    n = len(angles)
    if n < 2:
        raise ValidationError("need at least 2 samples to differentiate")
    if i == 0:
        return wrap_angle(angles[1] - angles[0]) / (times[1] - times[0])
    if i == n - 1:
        return wrap_angle(angles[n - 1] - angles[n - 2]) / (times[n - 1] - times[n - 2])
    return wrap_angle(angles[i + 1] - angles[i - 1]) / (times[i + 1] - times[i - 1])


def _wrap_np(d: np.ndarray) -> np.ndarray:
    # Mirrors types.wrap_angle elementwise (fmod keeps the sign, then fold).
    d = np.fmod(d, 2.0 * np.pi)
    d = np.where(d > np.pi, d - 2.0 * np.pi, d)
    d = np.where(d <= -np.pi, d + 2.0 * np.pi, d)
    return d


def wrapped_diff_series(angles: np.ndarray, times: np.ndarray) -> np.ndarray:
    n = len(angles)
    if n < 2:
        raise ValidationError("need at least 2 samples to differentiate")
    angles = np.asarray(angles, dtype=float)
    times = np.asarray(times, dtype=float)
    out = np.empty(n, dtype=float)
    out[0] = _wrap_np(angles[1] - angles[0]) / (times[1] - times[0])
    out[-1] = _wrap_np(angles[-1] - angles[-2]) / (times[-1] - times[-2])
    if n > 2:
        out[1:-1] = _wrap_np(angles[2:] - angles[:-2]) / (times[2:] - times[:-2])
    return out


def trapezoid_integral(values: np.ndarray, times: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if len(values) < 2:
        raise ValidationError("need at least 2 samples to integrate")
    seg = 0.5 * (values[1:] + values[:-1]) * (times[1:] - times[:-1])
    return float(np.sum(seg))


def trapezoid_mean(values: np.ndarray, times: np.ndarray) -> float:
    """Time average of a sampled signal: trapezoid integral over the span."""
    span = float(times[-1]) - float(times[0])
    if span <= 0.0:
        raise ValidationError("cannot average over a non-positive time span")
    return trapezoid_integral(values, times) / span


class TrapezoidAccumulator:
    """Running trapezoid integral fed one (t, value) sample at a time."""

    __slots__ = ("integral", "t_first", "t_prev", "v_prev", "count")

    def __init__(self):
        self.integral = 0.0
        self.t_first = math.nan
        self.t_prev = math.nan
        self.v_prev = math.nan
        self.count = 0

    def push(self, t: float, value: float) -> None:
        if self.count == 0:
            self.t_first = t
        else:
            self.integral += 0.5 * (value + self.v_prev) * (t - self.t_prev)
        self.t_prev = t
        self.v_prev = value
        self.count += 1

    def mean(self) -> float:
        span = self.t_prev - self.t_first
        if self.count < 2 or span <= 0.0:
            raise ValidationError("cannot average over a non-positive time span")
        return self.integral / span
