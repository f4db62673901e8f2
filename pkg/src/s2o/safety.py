"""Risk field around the ego and the safety factor score.

Each surrounding agent projects a scalar risk onto the ego::

    risk = field_const * M_eq / r_eq**2  +  kinetic_coeff * exp(xi) / r_eq**2

where ``M_eq = mass * (mass_gain * v_long**mass_exp + mass_base)`` is a
speed-inflated virtual mass, ``r_eq = sqrt(r_long**2 + k_a * r_lat**2)``
is an elliptical equivalent distance stretched by the agent's bounding-box
aspect ratio ``k_a = length / width``, and ``xi`` is the closing speed
(positive when the gap shrinks), clamped before exponentiation. Agent
risks superpose linearly over the region of interest, and the case-level
safety score is the time average of the superposed field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, ValidationError
from .kinematics import CaseTable, euclidean_distance, longitudinal_offset, roi_filter
from .numerics import trapezoid_mean
from .types import AgentState, DrivingCase, EgoState, RoiSpec, SceneFrame

# Largest exponent fed to exp() in the kinetic term; keeps degenerate
# near-collision geometry finite instead of overflowing.
EXP_CLAMP = 50.0


@dataclass(frozen=True)
class DsfParams:
    """Risk-field constants. Defaults are desk-scale, not vehicle-certified."""

    field_const: float = 0.001  # gravity-like coupling on the virtual mass
    kinetic_coeff: float = 1.0  # weight of the closing-speed exponential
    mass_gain: float = 0.05  # virtual-mass speed gain
    mass_exp: float = 1.0  # virtual-mass speed exponent
    mass_base: float = 1.0  # virtual-mass floor multiplier
    roi: RoiSpec = field(default_factory=RoiSpec)

    def __post_init__(self):
        if self.field_const <= 0 or self.kinetic_coeff <= 0:
            raise ValidationError("field_const and kinetic_coeff must be > 0")
        if self.mass_gain < 0 or self.mass_base <= 0:
            raise ValidationError("mass_gain must be >= 0 and mass_base > 0")


def virtual_mass(agent: AgentState, p: DsfParams) -> float:
    """Speed-inflated equivalent mass of an agent, kg."""
    if agent.v_long < 0:
        raise ValidationError(
            f"agent {agent.agent_id!r}: longitudinal speed must be >= 0, got {agent.v_long}"
        )
    return agent.mass * (p.mass_gain * agent.v_long**p.mass_exp + p.mass_base)


def equivalent_distance(ego: EgoState, agent: AgentState) -> float:
    """Elliptical distance: lateral offsets count k_a times as hard, squared."""
    dx = agent.x - ego.x
    dy = agent.y - ego.y
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    r_long = c * dx + s * dy
    r_lat = -s * dx + c * dy
    k_a = agent.length / agent.width
    r2 = r_long * r_long + k_a * r_lat * r_lat
    if r2 < 1e-24:
        raise DegenerateGeometryError(
            f"agent {agent.agent_id!r} coincides with the ego position"
        )
    return math.sqrt(r2)


def closing_speed(ego: EgoState, agent: AgentState) -> float:
    """Range-rate with the sign flipped: positive while the gap shrinks.

    Equals |v_rel| * cos(theta) with theta measured between the relative
    velocity and the agent-to-ego direction.
    """
    dx = agent.x - ego.x
    dy = agent.y - ego.y
    d = math.sqrt(dx * dx + dy * dy)
    if d < 1e-12:
        raise DegenerateGeometryError(
            f"agent {agent.agent_id!r} coincides with the ego position"
        )
    vex, vey = ego.velocity
    vax, vay = agent.velocity
    relx, rely = vax - vex, vay - vey
    return -(relx * dx + rely * dy) / d


def agent_risk(ego: EgoState, agent: AgentState, p: DsfParams) -> float:
    """Risk contribution of one agent at one instant. Non-negative, finite.

    Works on the squared equivalent distance directly so the scalar and
    vectorised paths round identically.
    """
    m_eq = virtual_mass(agent, p)
    dx = agent.x - ego.x
    dy = agent.y - ego.y
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    r_long = c * dx + s * dy
    r_lat = -s * dx + c * dy
    k_a = agent.length / agent.width
    r_eq2 = r_long * r_long + k_a * r_lat * r_lat
    if r_eq2 < 1e-24:
        raise DegenerateGeometryError(
            f"agent {agent.agent_id!r} coincides with the ego position"
        )
    xi = min(closing_speed(ego, agent), EXP_CLAMP)
    return (p.field_const * m_eq + p.kinetic_coeff * math.exp(xi)) / r_eq2


def ego_risk(frame: SceneFrame, p: DsfParams) -> float:
    """Superposed risk over agents inside the region of interest."""
    total = 0.0
    for agent in roi_filter(frame, p.roi):
        total += agent_risk(frame.ego, agent, p)
    return total


def _risk_kernel(dx, dy, ce, se, vex, vey, a_heading, a_speed, a_v_long, a_len, a_wid, a_mass, p):
    """Broadcast-friendly risk expression shared by every vectorised path.

    Returns (risk, in_roi, d). Degenerate distances produce inf risk and
    are left for the caller to police (raise, cap, or mask).
    """
    r_long = ce * dx + se * dy
    r_lat = -se * dx + ce * dy
    in_roi = (r_long >= -p.roi.rear) & (r_long <= p.roi.front)
    k_a = a_len / a_wid
    r_eq2 = r_long * r_long + k_a * r_lat * r_lat
    d = np.sqrt(dx * dx + dy * dy)
    m_eq = a_mass * (p.mass_gain * a_v_long**p.mass_exp + p.mass_base)
    relx = a_speed * np.cos(a_heading) - vex
    rely = a_speed * np.sin(a_heading) - vey
    with np.errstate(invalid="ignore", divide="ignore"):
        xi = np.minimum(-(relx * dx + rely * dy) / d, EXP_CLAMP)
        risk = (p.field_const * m_eq + p.kinetic_coeff * np.exp(xi)) / r_eq2
    return risk, in_roi, d


def _risk_series(table: CaseTable, p: DsfParams) -> np.ndarray:
    """Vectorised per-frame ego risk for a stable-agent-set case."""
    ex, ey, eh = table.x, table.y, table.heading
    ce, se = np.cos(eh), np.sin(eh)
    vex = table.speed * ce
    vey = table.speed * se
    total = np.zeros(len(table.t))
    for col in table.agents.values():
        if (col.v_long < 0).any():
            raise ValidationError(
                f"agent {col.agent_id!r}: longitudinal speed must be >= 0"
            )
        risk, in_roi, d = _risk_kernel(
            col.x - ex, col.y - ey, ce, se, vex, vey,
            col.heading, col.speed, col.v_long, col.length, col.width, col.mass, p,
        )
        if (d[in_roi] < 1e-12).any():
            raise DegenerateGeometryError(
                f"agent {col.agent_id!r} coincides with the ego position"
            )
        total += np.where(in_roi, risk, 0.0)
    return total


def frame_risk(x: float, y: float, heading: float, speed: float,
               agent_matrix: np.ndarray, p: DsfParams) -> float:
    """Superposed risk at one instant from a pre-packed (A, 8) agent matrix.

    Columns: x, y, heading, speed, v_long, length, width, mass. The ego
    state is passed as scalars so callers can substitute a derived speed.
    Expression-for-expression identical to the column-batch path so the
    streaming and batch evaluators agree.
    """
    if agent_matrix.shape[0] == 0:
        return 0.0
    ax, ay, ah, aspeed, avlong, alen, awid, amass = agent_matrix.T
    if (avlong < 0).any():
        raise ValidationError("agent longitudinal speed must be >= 0")
    ce, se = math.cos(heading), math.sin(heading)
    vex = speed * ce
    vey = speed * se
    risk, in_roi, d = _risk_kernel(
        ax - x, ay - y, ce, se, vex, vey, ah, aspeed, avlong, alen, awid, amass, p
    )
    if (d[in_roi] < 1e-12).any():
        raise DegenerateGeometryError("an agent coincides with the ego position")
    return float(np.where(in_roi, risk, 0.0).sum())


def risk_series(case: DrivingCase, p: DsfParams, table: CaseTable | None = None) -> np.ndarray:
    if table is None:
        table = CaseTable(case)
    if table.agents is not None:
        return _risk_series(table, p)
    return np.array([ego_risk(f, p) for f in case.frames], dtype=float)


def safety_score(case: DrivingCase, p: DsfParams, table: CaseTable | None = None) -> float:
    """Time-averaged superposed risk over the case (lower is safer)."""
    if table is None:
        table = CaseTable(case)
    return trapezoid_mean(risk_series(case, p, table), table.t)


@dataclass(frozen=True)
class HeatmapSpec:
    """Axis-aligned sampling window centred on the ego, metres."""

    width: float = 160.0  # extent along scene x
    height: float = 80.0  # extent along scene y
    cell_size: float = 2.0
    cap: float = 1e6  # value written where the probe meets an agent centre

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.cell_size <= 0:
            raise ValidationError("heatmap extents and cell size must be > 0")
        if self.width < self.cell_size or self.height < self.cell_size:
            raise ValidationError("heatmap window smaller than one cell")
        if self.cap <= 0:
            raise ValidationError("heatmap cap must be > 0")


@dataclass(frozen=True)
class RiskGrid:
    origin_x: float
    origin_y: float
    cell_size: float
    values: np.ndarray  # (rows, cols), row-major, row = y index

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def risk_heatmap(frame: SceneFrame, p: DsfParams, spec: HeatmapSpec) -> RiskGrid:
    """Rasterise the risk field by sweeping a virtual ego probe over a grid.

    The probe keeps the real ego's heading and velocity so the kinetic
    term stays meaningful; the region of interest travels with the probe.
    Cells whose centre coincides with an agent centre get ``spec.cap``,
    and every cell is clipped at the cap so the grid maximum is bounded.
    """
    ego = frame.ego
    cols = max(1, int(round(spec.width / spec.cell_size)))
    rows = max(1, int(round(spec.height / spec.cell_size)))
    origin_x = ego.x - 0.5 * cols * spec.cell_size
    origin_y = ego.y - 0.5 * rows * spec.cell_size
    cx = origin_x + (np.arange(cols) + 0.5) * spec.cell_size
    cy = origin_y + (np.arange(rows) + 0.5) * spec.cell_size
    px, py = np.meshgrid(cx, cy)  # (rows, cols)

    ce, se = math.cos(ego.heading), math.sin(ego.heading)
    vex, vey = ego.velocity
    total = np.zeros((rows, cols))
    for agent in frame.agents:
        if agent.v_long < 0:
            raise ValidationError(
                f"agent {agent.agent_id!r}: longitudinal speed must be >= 0"
            )
        risk, in_roi, d = _risk_kernel(
            agent.x - px, agent.y - py, ce, se, vex, vey,
            agent.heading, agent.speed, agent.v_long,
            agent.length, agent.width, agent.mass, p,
        )
        degenerate = d < 1e-12
        risk = np.where(degenerate, spec.cap, risk)
        total += np.where(in_roi | degenerate, risk, 0.0)
    total = np.minimum(total, spec.cap)
    return RiskGrid(origin_x=origin_x, origin_y=origin_y, cell_size=spec.cell_size, values=total)


def grid_to_csv(grid: RiskGrid) -> str:
    """Headered CSV: geometry line, then the grid values row-major."""
    lines = [
        "origin_x,origin_y,cell_size,rows,cols",
        f"{grid.origin_x!r},{grid.origin_y!r},{grid.cell_size!r},{grid.rows},{grid.cols}",
    ]
    for row in grid.values:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def grid_from_csv(text: str) -> RiskGrid:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 3 or not lines[0].startswith("origin_x"):
        raise ValidationError("not a risk-grid CSV")
    ox, oy, cs, rows, cols = lines[1].split(",")
    values = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    if values.shape != (int(rows), int(cols)):
        raise ValidationError(
            f"grid shape {values.shape} does not match header ({rows}, {cols})"
        )
    return RiskGrid(float(ox), float(oy), float(cs), values)
