"""Derived motion quantities, resampling, ROI selection and collision checks.

The derivation chain is speed -> longitudinal acceleration -> longitudinal
jerk via the stencils in ``numerics``; yaw rate comes from wrapped heading
differences and the lateral channel is the centripetal product speed *
yaw_rate differentiated once more for lateral jerk. Speed itself is taken
from the log when present and reconstructed from positions otherwise.
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from . import numerics
from .errors import DegenerateGeometryError, ValidationError
from .types import AgentState, DrivingCase, EgoState, RoiSpec, SceneFrame, wrap_angle


def _ego_arrays(case: DrivingCase):
    t = np.array([f.t for f in case.frames], dtype=float)
    x = np.array([f.ego.x for f in case.frames], dtype=float)
    y = np.array([f.ego.y for f in case.frames], dtype=float)
    h = np.array([f.ego.heading for f in case.frames], dtype=float)
    v = np.array([f.ego.speed for f in case.frames], dtype=float)
    return t, x, y, h, v


def speeds_from_positions(x: np.ndarray, y: np.ndarray, t: np.ndarray) -> np.ndarray:
    vx = numerics.diff_series(x, t)
    vy = numerics.diff_series(y, t)
    return np.sqrt(vx * vx + vy * vy)


def derive_kinematics(case: DrivingCase) -> DrivingCase:
    """Fill the derived ego fields on every frame, returning a new case.

    Speeds missing from the log (NaN) are reconstructed from positions
    first; everything else chains off the speed and heading series.
    """
    t, x, y, h, v = _ego_arrays(case)
    if np.isnan(v).any():
        derived = speeds_from_positions(x, y, t)
        v = np.where(np.isnan(v), derived, v)
    accel_long = numerics.diff_series(v, t)
    jerk_long = numerics.diff_series(accel_long, t)
    yaw_rate = numerics.wrapped_diff_series(h, t)
    accel_lat = v * yaw_rate
    jerk_lat = numerics.diff_series(accel_lat, t)

    frames = []
    for i, frame in enumerate(case.frames):
        ego = replace(
            frame.ego,
            speed=float(v[i]),
            v_long=frame.ego.v_long if not math.isnan(frame.ego.speed) else float(v[i]),
            accel_long=float(accel_long[i]),
            accel_lat=float(accel_lat[i]),
            jerk_long=float(jerk_long[i]),
            jerk_lat=float(jerk_lat[i]),
            yaw_rate=float(yaw_rate[i]),
        )
        frames.append(replace(frame, ego=ego))
    return replace(case, frames=tuple(frames))


def _interp_heading(h0: float, h1: float, w: float) -> float:
    return wrap_angle(h0 + w * wrap_angle(h1 - h0))


def _interp_agent(a0: AgentState, a1: AgentState, w: float) -> AgentState:
    return replace(
        a0,
        x=a0.x + w * (a1.x - a0.x),
        y=a0.y + w * (a1.y - a0.y),
        heading=_interp_heading(a0.heading, a1.heading, w),
        speed=a0.speed + w * (a1.speed - a0.speed),
        v_long=a0.v_long + w * (a1.v_long - a0.v_long),
    )


def resample_uniform(case: DrivingCase, dt: float) -> DrivingCase:
    """Linear-interpolate the case onto a uniform grid with step ``dt``.

    Agents present in both bracketing frames are interpolated; agents
    present in only one side are copied from the nearer frame.
    """
    if dt <= 0.0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    t0, t1 = case.frames[0].t, case.frames[-1].t
    n = max(2, int(math.floor((t1 - t0) / dt + 1e-9)) + 1)
    times = [t0 + k * dt for k in range(n)]
    src_times = case.times

    frames = []
    j = 0
    for tq in times:
        while j + 1 < len(src_times) - 1 and src_times[j + 1] <= tq:
            j += 1
        fa, fb = case.frames[j], case.frames[j + 1]
        span = fb.t - fa.t
        w = min(1.0, max(0.0, (tq - fa.t) / span))
        ego_a, ego_b = fa.ego, fb.ego
        speed_nan = math.isnan(ego_a.speed) or math.isnan(ego_b.speed)
        ego = replace(
            ego_a,
            x=ego_a.x + w * (ego_b.x - ego_a.x),
            y=ego_a.y + w * (ego_b.y - ego_a.y),
            heading=_interp_heading(ego_a.heading, ego_b.heading, w),
            speed=math.nan if speed_nan else ego_a.speed + w * (ego_b.speed - ego_a.speed),
            v_long=None,
            section=(ego_a if w < 0.5 else ego_b).section,
        )
        near = fa if w < 0.5 else fb
        far = fb if w < 0.5 else fa
        far_by_id = {a.agent_id: a for a in far.agents}
        agents = []
        for a in near.agents:
            other = far_by_id.get(a.agent_id)
            if other is None:
                agents.append(a)
            elif near is fa:
                agents.append(_interp_agent(a, other, w))
            else:
                agents.append(_interp_agent(other, a, w))
        frames.append(SceneFrame(t=tq, ego=ego, agents=tuple(agents), road=fa.road))
    meta = replace(case.meta, dt=dt)
    return replace(case, frames=tuple(frames), meta=meta)


def longitudinal_offset(ego: EgoState, agent: AgentState) -> float:
    """Signed along-heading distance from ego to agent in the ego frame."""
    dx = agent.x - ego.x
    dy = agent.y - ego.y
    return math.cos(ego.heading) * dx + math.sin(ego.heading) * dy


def roi_filter(frame: SceneFrame, roi: RoiSpec) -> tuple[AgentState, ...]:
    """Agents within [-roi.rear, +roi.front] metres along the ego heading (closed)."""
    ego = frame.ego
    kept = []
    for agent in frame.agents:
        off = longitudinal_offset(ego, agent)
        if -roi.rear <= off <= roi.front:
            kept.append(agent)
    return tuple(kept)


def obb_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]], dtype=float)
    rot = np.array([[c, -s], [s, c]], dtype=float)
    return local @ rot.T + np.array([x, y], dtype=float)


def _boxes_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    # Separating-axis test for two rectangles; touching counts as overlap,
    # so separation requires a strictly positive gap.
    for corners, other in ((corners_a, corners_b), (corners_b, corners_a)):
        for k in range(2):
            edge = corners[k + 1] - corners[k]
            axis = np.array([-edge[1], edge[0]])
            pa = corners @ axis
            pb = other @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def boxes_overlap(a, b) -> bool:
    """Oriented-bounding-box overlap of two agent-like states."""
    ca = obb_corners(a.x, a.y, a.heading, a.length, a.width)
    cb = obb_corners(b.x, b.y, b.heading, b.length, b.width)
    return _boxes_overlap(ca, cb)


def frame_has_crash(frame: SceneFrame) -> bool:
    ego = frame.ego
    ce = obb_corners(ego.x, ego.y, ego.heading, ego.length, ego.width)
    for agent in frame.agents:
        ca = obb_corners(agent.x, agent.y, agent.heading, agent.length, agent.width)
        if _boxes_overlap(ce, ca):
            return True
    return False


def _stable_agent_ids(case: DrivingCase):
    ids = [a.agent_id for a in case.frames[0].agents]
    idset = set(ids)
    for frame in case.frames[1:]:
        if {a.agent_id for a in frame.agents} != idset:
            return None
    return ids


def _vectorized_crash(case: DrivingCase, ids: Sequence[str]) -> bool:
    frames = case.frames
    n = len(frames)
    ego = np.empty((n, 5))
    cols = {aid: np.empty((n, 5)) for aid in ids}
    for i, f in enumerate(frames):
        e = f.ego
        ego[i] = (e.x, e.y, e.heading, e.length, e.width)
        for a in f.agents:
            cols[a.agent_id][i] = (a.x, a.y, a.heading, a.length, a.width)
    ce = _corners_series(ego)
    for aid in ids:
        ca = _corners_series(cols[aid])
        if _series_overlap(ce, ca).any():
            return True
    return False


def _corners_series(state: np.ndarray) -> np.ndarray:
    """(n,5) [x y heading length width] -> (n,4,2) corner coordinates."""
    x, y, h, ln, wd = state.T
    c, s = np.cos(h), np.sin(h)
    hl, hw = 0.5 * ln, 0.5 * wd
    sx = np.array([1.0, 1.0, -1.0, -1.0])
    sy = np.array([1.0, -1.0, -1.0, 1.0])
    lx = hl[:, None] * sx[None, :]
    ly = hw[:, None] * sy[None, :]
    cx = x[:, None] + c[:, None] * lx - s[:, None] * ly
    cy = y[:, None] + s[:, None] * lx + c[:, None] * ly
    return np.stack([cx, cy], axis=-1)


def _series_overlap(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """Per-frame SAT over corner series; returns a boolean (n,) mask."""
    edges = np.concatenate(
        [ca[:, 1:3] - ca[:, 0:2], cb[:, 1:3] - cb[:, 0:2]], axis=1
    )  # (n, 4, 2)
    axes = np.stack([-edges[..., 1], edges[..., 0]], axis=-1)  # (n, 4, 2)
    pa = np.einsum("nkd,ncd->nkc", axes, ca)  # (n, 4 axes, 4 corners)
    pb = np.einsum("nkd,ncd->nkc", axes, cb)
    sep = (pa.max(axis=2) < pb.min(axis=2)) | (pb.max(axis=2) < pa.min(axis=2))
    return ~sep.any(axis=1)


def frame_crash_from_boxes(ego: EgoState, boxes: np.ndarray) -> bool:
    """Crash check for one frame from an (A, 5) [x y heading length width] matrix."""
    if boxes.shape[0] == 0:
        return False
    ego_row = np.array([[ego.x, ego.y, ego.heading, ego.length, ego.width]])
    ce = np.broadcast_to(_corners_series(ego_row), (boxes.shape[0], 4, 2))
    ca = _corners_series(boxes)
    return bool(_series_overlap(ce, ca).any())


def detect_crash(case: DrivingCase) -> bool:
    """True when the ego box overlaps any agent box in any frame (touch counts)."""
    ids = _stable_agent_ids(case)
    if ids is not None and len(case.frames) > 8:
        return _vectorized_crash(case, ids)
    return any(frame_has_crash(frame) for frame in case.frames)


def euclidean_distance(ego: EgoState, agent: AgentState) -> float:
    d = math.hypot(agent.x - ego.x, agent.y - ego.y)
    if d < 1e-12:
        raise DegenerateGeometryError(
            f"agent {agent.agent_id!r} coincides with the ego position"
        )
    return d


class AgentColumns:
    """Per-agent state series for cases whose agent set is stable."""

    __slots__ = ("agent_id", "x", "y", "heading", "speed", "v_long", "length", "width", "mass")

    def __init__(self, agent_id: str, n: int):
        self.agent_id = agent_id
        for name in ("x", "y", "heading", "speed", "v_long", "length", "width", "mass"):
            setattr(self, name, np.empty(n, dtype=float))


class CaseTable:
    """Columnar view of a case plus the derived ego series.

    Built once per evaluation so the four scorers and the crash check do
    not each re-walk the frame objects. ``agents`` is None when the agent
    id set changes between frames (scorers then fall back to per-frame
    loops).
    """

    def __init__(self, case: DrivingCase):
        frames = case.frames
        n = len(frames)
        self.case = case
        self.t = np.array([f.t for f in frames], dtype=float)
        self.x = np.empty(n)
        self.y = np.empty(n)
        self.heading = np.empty(n)
        self.raw_speed = np.empty(n)
        self.ego_length = frames[0].ego.length
        self.ego_width = frames[0].ego.width
        self.ego_mass = frames[0].ego.mass
        self.sections = [f.ego.section for f in frames]
        ids = [a.agent_id for a in frames[0].agents]
        agents = {aid: AgentColumns(aid, n) for aid in ids}
        stable = True
        for i, f in enumerate(frames):
            e = f.ego
            self.x[i] = e.x
            self.y[i] = e.y
            self.heading[i] = e.heading
            self.raw_speed[i] = e.speed
            if stable:
                if len(f.agents) != len(ids):
                    stable = False
                else:
                    for a in f.agents:
                        col = agents.get(a.agent_id)
                        if col is None:
                            stable = False
                            break
                        col.x[i] = a.x
                        col.y[i] = a.y
                        col.heading[i] = a.heading
                        col.speed[i] = a.speed
                        col.v_long[i] = a.v_long
                        col.length[i] = a.length
                        col.width[i] = a.width
                        col.mass[i] = a.mass
        self.agents = agents if stable else None

        speed = self.raw_speed
        if np.isnan(speed).any():
            derived = speeds_from_positions(self.x, self.y, self.t)
            speed = np.where(np.isnan(speed), derived, speed)
        self.speed = speed
        self.accel_long = numerics.diff_series(speed, self.t)
        self.jerk_long = numerics.diff_series(self.accel_long, self.t)
        self.yaw_rate = numerics.wrapped_diff_series(self.heading, self.t)
        self.accel_lat = speed * self.yaw_rate
        self.jerk_lat = numerics.diff_series(self.accel_lat, self.t)
