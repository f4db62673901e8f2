"""Frame-by-frame evaluation with running trapezoid accumulators.

Every emission equals the batch pipeline run on the prefix seen so far.
The derivation stencils are central differences with one-sided ends, so
the last few samples of each derived series are provisional: they change
once more frames arrive. The evaluator therefore keeps a settled integral
over everything older than PROVISIONAL_TAIL segments and recomputes only
that short tail (plus the event-loss measure) on each push.

Finality bookkeeping, worst case (speeds reconstructed from positions):
speed at j is final once j <= n-2, acceleration once j <= n-3, jerk once
j <= n-4. A provisional tail of 3 segments covers the whole chain. Risk
and the efficiency integrand are final on arrival whenever the log
carries the speed; frames without it go through the same tail machinery.
"""
from __future__ import annotations

import math
from collections import deque
from typing import Optional

import numpy as np

from .errors import StreamOrderError, ValidationError
from .experience import (
    EmergencyStopDetector,
    UTurnDetector,
    _power_terms,
    instantaneous_efficiency,
)
from .kinematics import frame_crash_from_boxes
from .pipeline import (
    EvalParams,
    EvaluationReport,
    TermScores,
    classify_segment,
    crash_revision,
    integrate,
    normalize,
)
from .safety import frame_risk
from .types import RoadContext, SceneFrame, wrap_angle

PROVISIONAL_TAIL = 3


class StreamEvaluator:
    """Incremental pipeline: push frames, get the report for the prefix.

    The first frame returns None (integrals need two samples). A crash
    latches: every later emission carries final = 0.
    """

    def __init__(self, model, params: EvalParams | None = None, road: RoadContext | None = None,
                 case_id: str = "", crash_flag: bool = False):
        self.model = model
        self.params = params or EvalParams()
        self.road = road or RoadContext()
        self.case_id = case_id
        self.crash = bool(crash_flag)
        # raw per-frame series
        self._t: list[float] = []
        self._x: list[float] = []
        self._y: list[float] = []
        self._h: list[float] = []
        self._v_raw: list[float] = []
        self._vlim: list[float] = []
        self._risk: list[float] = []
        self._mass = math.nan
        # agent matrices for the provisional tail (risk recompute when
        # the ego speed is derived rather than logged)
        self._mats: deque[np.ndarray] = deque(maxlen=PROVISIONAL_TAIL + 1)
        # settled state
        self._settled_upto = -1  # last frame index folded into the settled integrals
        self._settled = {"risk": 0.0, "eff": 0.0, "comf": 0.0, "energy": 0.0}
        self._settled_vals: dict = {}  # integrand values at _settled_upto
        cp = self.params.comfort
        self._uturn = UTurnDetector(cp.u_turn_angle, cp.u_turn_window)
        self._stop = EmergencyStopDetector(cp.stop_decel, cp.stop_duration)
        self._stop_fed_upto = -1

    # -- derived-value helpers over the current prefix -------------------

    def _stencil(self, j: int) -> tuple[int, int]:
        n = len(self._t)
        if j == 0:
            return 0, 1
        if j == n - 1:
            return n - 2, n - 1
        return j - 1, j + 1

    def _speed_at(self, j: int) -> float:
        v = self._v_raw[j]
        if not math.isnan(v):
            return v
        a, b = self._stencil(j)
        dt = self._t[b] - self._t[a]
        vx = (self._x[b] - self._x[a]) / dt
        vy = (self._y[b] - self._y[a]) / dt
        return math.sqrt(vx * vx + vy * vy)

    def _accel_at(self, j: int) -> float:
        a, b = self._stencil(j)
        return (self._speed_at(b) - self._speed_at(a)) / (self._t[b] - self._t[a])

    def _jerk_at(self, j: int) -> float:
        a, b = self._stencil(j)
        return (self._accel_at(b) - self._accel_at(a)) / (self._t[b] - self._t[a])

    def _yaw_at(self, j: int) -> float:
        a, b = self._stencil(j)
        return wrap_angle(self._h[b] - self._h[a]) / (self._t[b] - self._t[a])

    def _risk_at(self, j: int) -> float:
        cached = self._risk[j]
        if not math.isnan(cached):
            return cached
        # derived-speed frame still in the provisional tail
        n = len(self._t)
        offset = j - (n - len(self._mats))
        if offset < 0:
            raise AssertionError("risk cache missing for a settled frame")
        return frame_risk(
            self._x[j], self._y[j], self._h[j], self._speed_at(j),
            self._mats[offset], self.params.dsf,
        )

    def _integrands_at(self, j: int) -> dict:
        speed = self._speed_at(j)
        accel = self._accel_at(j)
        jerk = self._jerk_at(j)
        yaw = self._yaw_at(j)
        eff = instantaneous_efficiency(speed, self._vlim[j])
        comf = abs(yaw) * speed + self.params.comfort.jerk_weight * (jerk * jerk)
        pa, pw, pg, pr = _power_terms(speed, accel, self._mass, self.params.vehicle, self.road)
        return {
            "risk": self._risk_at(j),
            "eff": eff,
            "comf": comf,
            "energy": pa + pw + pg + pr,
            "accel": accel,
        }

    # -- main entry point -------------------------------------------------

    def push(self, frame: SceneFrame) -> Optional[EvaluationReport]:
        t = frame.t
        if self._t and not t > self._t[-1]:
            raise StreamOrderError(
                f"frame at t={t} is not after the previous frame at t={self._t[-1]}"
            )
        ego = frame.ego
        if not self._t:
            self._mass = ego.mass

        agents = frame.agents
        mat = np.empty((len(agents), 8))
        for i, a in enumerate(agents):
            mat[i] = (a.x, a.y, a.heading, a.speed, a.v_long, a.length, a.width, a.mass)

        self._t.append(t)
        self._x.append(ego.x)
        self._y.append(ego.y)
        self._h.append(ego.heading)
        self._v_raw.append(ego.speed)
        self._vlim.append(self.road.speed_limit_mps(ego.section))
        self._mats.append(mat)
        if math.isnan(ego.speed):
            self._risk.append(math.nan)  # provisional; recomputed via _risk_at
        else:
            self._risk.append(
                frame_risk(ego.x, ego.y, ego.heading, ego.speed, mat, self.params.dsf)
            )
        if not self.crash and frame_crash_from_boxes(ego, mat[:, [0, 1, 2, 5, 6]]):
            self.crash = True
        self._uturn.feed(t, ego.heading)

        n = len(self._t)
        if n < 2:
            return None

        # fold newly-final frames into the settled integrals
        target = n - 1 - PROVISIONAL_TAIL
        while self._settled_upto < target:
            j = self._settled_upto + 1
            vals = self._integrands_at(j)
            self._risk[j] = vals["risk"]  # finalize derived-speed risk
            if j > 0:
                dt = self._t[j] - self._t[j - 1]
                prev = self._settled_vals
                for key in self._settled:
                    self._settled[key] += 0.5 * (prev[key] + vals[key]) * dt
            self._settled_vals = vals
            self._settled_upto = j
        # the emergency-stop scan runs ahead of the settled boundary:
        # accelerations are final through n-3
        while self._stop_fed_upto < n - 3:
            j = self._stop_fed_upto + 1
            self._stop.feed(self._t[j], self._accel_at(j))
            self._stop_fed_upto = j

        return self._emit(n)

    def _emit(self, n: int) -> EvaluationReport:
        totals = dict(self._settled)
        start = self._settled_upto
        if start < 0:
            start = 0
            prev = self._integrands_at(0)
        else:
            prev = self._settled_vals
        for j in range(start + 1, n):
            vals = self._integrands_at(j)
            dt = self._t[j] - self._t[j - 1]
            for key in totals:
                totals[key] += 0.5 * (prev[key] + vals[key]) * dt
            prev = vals

        # emergency-stop events over the full prefix: settled scan state
        # plus a throwaway feed of the provisional accelerations
        stop = self._stop.snapshot()
        for j in range(self._stop_fed_upto + 1, n):
            stop.feed(self._t[j], self._accel_at(j))
        stop.finish()

        cp = self.params.comfort
        loss_integral = 0.0
        for a, b in self._uturn.events:
            loss_integral += cp.u_turn_penalty * self._window_measure(a, b, n)
        for a, b in stop.events:
            loss_integral += cp.stop_penalty * self._window_measure(a, b, n)

        span = self._t[n - 1] - self._t[0]
        raw = TermScores(
            safety=totals["risk"] / span,
            efficiency=totals["eff"] / span,
            comfort=(totals["comf"] + loss_integral) / span,
            energy=totals["energy"] / span,
        )
        scores = normalize(raw, self.model.calibration)
        segment = classify_segment(scores, self.model.svm, self.crash)
        integrated = integrate(scores, self.model.weights, segment)
        final = crash_revision(integrated, self.crash)
        if not self.crash and not math.isfinite(final):
            raise ValidationError(f"non-finite final score for case {self.case_id!r}")
        return EvaluationReport(
            case_id=self.case_id,
            raw=raw,
            normalized=scores,
            segment=segment,
            crash=self.crash,
            integrated=integrated,
            final=final,
            t=self._t[n - 1],
            frames=n,
        )

    def _window_measure(self, a: int, b: int, n: int) -> float:
        """Trapezoid weight of a unit penalty held on frames [a, b]."""
        t = self._t
        w = t[b] - t[a]
        if a > 0:
            w += 0.5 * (t[a] - t[a - 1])
        if b < n - 1:
            w += 0.5 * (t[b + 1] - t[b])
        return w
