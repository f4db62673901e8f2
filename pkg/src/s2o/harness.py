"""Synthetic closed-loop scenario harness.

Generates driving cases end to end: scripted or car-following agents, an
ego planner (conservative, aggressive, or deliberately crashing), forward
Euler integration at a fixed step, crash-terminated episodes, and a
synthetic rating oracle so the fitting pipeline can be validated against
known integrator weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .fitting import RatedCase, calibrate_normalization, normalize_matrix
from .kinematics import frame_has_crash
from .pipeline import (
    DEFAULT_SEGMENT_THRESHOLDS,
    DEFAULT_WEIGHTS,
    SegmentWeights,
)
from .types import (
    DEFAULT_AGENT_MASS_KG,
    AgentKind,
    AgentState,
    CaseMeta,
    DrivingCase,
    EgoState,
    Level,
    RoadContext,
    RoadSection,
    SceneFrame,
    wrap_angle,
)

SIM_DT = 0.1
RUNAWAY_SPEED = 200.0
LANE_WIDTH = 3.5
EGO_LENGTH = 4.5
EGO_WIDTH = 1.8
EGO_MASS = 1500.0

_AGENT_DIMS = {
    AgentKind.CAR: (4.5, 1.8),
    AgentKind.TRUCK: (10.0, 2.5),
    AgentKind.BUS: (12.0, 2.6),
    AgentKind.PEDESTRIAN: (0.6, 0.6),
    AgentKind.CYCLIST: (1.8, 0.6),
}


@dataclass(frozen=True)
class IdmParams:
    """Intelligent-driver-model parameters."""

    desired_speed: float
    headway: float = 1.5
    min_gap: float = 2.0
    max_accel: float = 1.5
    comfort_decel: float = 2.0
    exponent: float = 4.0

    def __post_init__(self):
        for name in ("desired_speed", "headway", "min_gap", "max_accel", "comfort_decel"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")


def idm_accel(speed: float, lead_speed: Optional[float], gap: Optional[float],
              p: IdmParams) -> float:
    """Longitudinal acceleration command.

    Free-road term minus the interaction term; the desired gap grows with
    speed (time headway) and with closing speed. With no leader the
    interaction term is dropped.
    """
    free = 1.0 - (speed / p.desired_speed) ** p.exponent
    if lead_speed is None or gap is None:
        return p.max_accel * free
    if gap <= 0:
        raise ValidationError(f"car-following gap must be positive, got {gap}")
    closing = speed - lead_speed
    desired_gap = p.min_gap + speed * p.headway + (
        speed * closing / (2.0 * math.sqrt(p.max_accel * p.comfort_decel))
    )
    return p.max_accel * (free - (desired_gap / gap) ** 2)


@dataclass(frozen=True)
class AgentScript:
    """Open-loop (speed profile) or car-following behaviour for one agent."""

    agent_id: str
    kind: AgentKind
    x0: float
    y0: float
    heading: float = 0.0
    speed_profile: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    follows: Optional[str] = None
    idm: Optional[IdmParams] = None
    lane_shift: Optional[tuple[float, float, float, float]] = None  # t0, t1, y_from, y_to
    length: Optional[float] = None
    width: Optional[float] = None
    mass: Optional[float] = None

    def dims(self) -> tuple[float, float, float]:
        L, W = _AGENT_DIMS[self.kind]
        return (
            self.length if self.length is not None else L,
            self.width if self.width is not None else W,
            self.mass if self.mass is not None else DEFAULT_AGENT_MASS_KG[self.kind],
        )

    def speed_at(self, t: float) -> float:
        ts = [p[0] for p in self.speed_profile]
        vs = [p[1] for p in self.speed_profile]
        return float(np.interp(t, ts, vs))

    def shift_y(self, t: float) -> Optional[float]:
        if self.lane_shift is None:
            return None
        t0, t1, y_a, y_b = self.lane_shift
        if t1 <= t0:
            raise ValidationError("lane shift must have t1 > t0")
        u = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        s = 0.5 * (1.0 - math.cos(math.pi * u))
        return y_a + (y_b - y_a) * s


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    section: RoadSection
    duration: float
    ego_speed0: float
    ego_x0: float = 0.0
    ego_y0: float = 0.0
    agents: tuple[AgentScript, ...] = ()
    gradient: float = 0.0
    rolling_coeff: float = 0.015
    description: str = ""

    def __post_init__(self):
        if self.duration <= 0:
            raise ValidationError(f"scenario duration must be > 0, got {self.duration}")

    def road(self) -> RoadContext:
        return RoadContext(gradient=self.gradient, rolling_coeff=self.rolling_coeff)


@dataclass(frozen=True)
class PlannerDecision:
    accel: float
    yaw_rate: float = 0.0


@dataclass
class _AgentSim:
    script: AgentScript
    x: float
    y: float
    heading: float
    speed: float


class Planner:
    """Base ego policy: car-following with a lane-keeping yaw controller."""

    name = "planner"

    def __init__(self, idm_factory: Callable[[float], IdmParams]):
        self._idm_factory = idm_factory
        self._lane_target: Optional[float] = None

    def reset(self, scenario: ScenarioSpec) -> None:
        self._lane_target = scenario.ego_y0

    def _leader(self, x, y, heading, agents: Sequence[_AgentSim], lane_y: float):
        # watch both the target lane and the lane the body is actually in,
        # so mid-change transits still brake for traffic in either band
        best = None
        cos_h, sin_h = math.cos(heading), math.sin(heading)
        for a in agents:
            dx = (a.x - x) * cos_h + (a.y - y) * sin_h
            if dx <= 0:
                continue
            if abs(a.y - lane_y) > LANE_WIDTH / 2 and abs(a.y - y) > LANE_WIDTH / 2:
                continue
            if best is None or dx < best[0]:
                L, _, _ = a.script.dims()
                best = (dx, a.speed, dx - (EGO_LENGTH + L) / 2)
        return best

    def _yaw_toward(self, y: float, heading: float) -> float:
        assert self._lane_target is not None
        heading_des = max(-0.3, min(0.3, 0.15 * (self._lane_target - y)))
        return max(-0.5, min(0.5, 2.0 * wrap_angle(heading_des - heading)))

    def decide(self, t, x, y, heading, speed, agents, v_limit) -> PlannerDecision:
        idm = self._idm_factory(v_limit)
        lead = self._leader(x, y, heading, agents, self._lane_target)
        if lead is None:
            accel = idm_accel(speed, None, None, idm)
        else:
            gap = max(lead[2], 0.05)
            accel = idm_accel(speed, lead[1], gap, idm)
        return PlannerDecision(accel=accel, yaw_rate=self._yaw_toward(y, heading))


class ConservativeDriver(Planner):
    """Long headway, gentle accelerations, stays under the limit."""

    name = "conservative"

    def __init__(self):
        super().__init__(
            lambda vlim: IdmParams(
                desired_speed=0.92 * vlim, headway=2.2, min_gap=4.0,
                max_accel=1.0, comfort_decel=1.8,
            )
        )


class AggressiveDriver(Planner):
    """Short headway, hard accelerations, opportunistic lane changes."""

    name = "aggressive"

    def __init__(self):
        super().__init__(
            lambda vlim: IdmParams(
                desired_speed=1.15 * vlim, headway=0.9, min_gap=1.5,
                max_accel=2.5, comfort_decel=3.0,
            )
        )
        self._home_lane = 0.0

    def reset(self, scenario: ScenarioSpec) -> None:
        super().reset(scenario)
        self._home_lane = scenario.ego_y0

    def _lane_clear(self, x, lane_y, speed, agents) -> bool:
        for a in agents:
            if abs(a.y - lane_y) > LANE_WIDTH / 2:
                continue
            if math.cos(a.heading) < -0.5 and -10.0 <= a.x - x <= 180.0:
                return False  # oncoming lane: no overtaking into live traffic
            closing = speed - a.speed * math.cos(a.heading)
            ahead = max(25.0, 25.0 + 2.5 * closing)
            if -10.0 <= a.x - x <= ahead:
                return False
        return True

    def decide(self, t, x, y, heading, speed, agents, v_limit) -> PlannerDecision:
        idm = self._idm_factory(v_limit)
        settled = abs(y - self._lane_target) < 0.4
        if settled:
            lead = self._leader(x, y, heading, agents, self._lane_target)
            blocked = lead is not None and lead[1] < 0.8 * idm.desired_speed and lead[0] < 35.0
            if blocked:
                for cand in (self._home_lane + LANE_WIDTH, self._home_lane - LANE_WIDTH):
                    if cand != self._lane_target and self._lane_clear(x, cand, speed, agents):
                        self._lane_target = cand
                        break
            elif self._lane_target != self._home_lane and self._lane_clear(
                x, self._home_lane, speed, agents
            ):
                self._lane_target = self._home_lane
        return super().decide(t, x, y, heading, speed, agents, v_limit)


class ErraticDriver(Planner):
    """Lurching accelerate-brake cycles, tailgating, weaving; stays slow.

    Produces genuinely unpleasant but usually crash-free episodes, which
    anchors the poorly-rated end of synthetic corpora.
    """

    name = "erratic"

    def __init__(self):
        super().__init__(
            lambda vlim: IdmParams(
                desired_speed=0.9 * vlim, headway=0.5, min_gap=1.0,
                max_accel=2.5, comfort_decel=4.5,
            )
        )

    def decide(self, t, x, y, heading, speed, agents, v_limit) -> PlannerDecision:
        phase = t % 6.0
        cycle = int(t // 6.0)
        if phase < 4.0:
            accel = 2.2 if speed < 0.9 * v_limit else 0.0
        else:
            accel = -6.5 if cycle % 4 == 3 else -4.5
            if speed < 0.25 * v_limit:
                accel = 0.0
        idm = self._idm_factory(v_limit)
        lead = self._leader(x, y, heading, agents, self._lane_target)
        if lead is not None:
            gap = max(lead[2], 0.05)
            accel = min(accel, idm_accel(speed, lead[1], gap, idm))
        yaw = 0.12 * math.sin(0.8 * t) + self._yaw_toward(y, heading)
        return PlannerDecision(accel=accel, yaw_rate=max(-0.5, min(0.5, yaw)))


class CrasherDriver(Planner):
    """Keeps pushing regardless of traffic; exists to produce crash cases."""

    name = "crasher"

    def __init__(self):
        super().__init__(lambda vlim: IdmParams(desired_speed=vlim))

    def decide(self, t, x, y, heading, speed, agents, v_limit) -> PlannerDecision:
        accel = 1.2 if speed < 1.3 * v_limit else 0.0
        return PlannerDecision(accel=accel, yaw_rate=self._yaw_toward(y, heading))


PLANNERS: dict[str, Callable[[], Planner]] = {
    "conservative": ConservativeDriver,
    "aggressive": AggressiveDriver,
    "erratic": ErraticDriver,
    "crasher": CrasherDriver,
}


def _agent_state(sim: _AgentSim) -> AgentState:
    L, W, M = sim.script.dims()
    return AgentState(
        agent_id=sim.script.agent_id,
        kind=sim.script.kind,
        x=sim.x, y=sim.y, heading=sim.heading, speed=sim.speed,
        length=L, width=W, mass=M,
    )


def run_closed_loop(scenario: ScenarioSpec, planner: Planner,
                    dt: float = SIM_DT) -> DrivingCase:
    """Simulate one episode; stops at the first crash frame (inclusive)."""
    if dt <= 0:
        raise ValidationError("dt must be positive")
    planner.reset(scenario)
    road = scenario.road()
    v_limit = road.speed_limit_mps(scenario.section)

    sims = [
        _AgentSim(
            script=s, x=s.x0, y=s.shift_y(0.0) if s.lane_shift else s.y0,
            heading=s.heading, speed=s.speed_at(0.0),
        )
        for s in scenario.agents
    ]
    by_id = {s.script.agent_id: s for s in sims}
    if len(by_id) != len(sims):
        raise ValidationError("duplicate agent id in scenario")

    ex, ey, eh, ev = scenario.ego_x0, scenario.ego_y0, 0.0, scenario.ego_speed0
    frames: list[SceneFrame] = []
    crashed = False
    n_steps = int(round(scenario.duration / dt))
    for k in range(n_steps + 1):
        t = k * dt
        ego = EgoState(
            x=ex, y=ey, heading=eh, speed=ev,
            length=EGO_LENGTH, width=EGO_WIDTH, mass=EGO_MASS,
            section=scenario.section,
        )
        frame = SceneFrame(t=t, ego=ego, agents=tuple(_agent_state(s) for s in sims), road=road)
        frames.append(frame)
        if frame_has_crash(frame):
            crashed = True
            break
        if k == n_steps:
            break

        decision = planner.decide(t, ex, ey, eh, ev, sims, v_limit)
        ex += ev * math.cos(eh) * dt
        ey += ev * math.sin(eh) * dt
        eh = wrap_angle(eh + decision.yaw_rate * dt)
        ev = max(0.0, ev + decision.accel * dt)
        if ev > RUNAWAY_SPEED:
            raise RuntimeError(
                f"runaway ego speed {ev:.1f} m/s in scenario {scenario.name!r}"
            )

        t_next = t + dt
        for sim in sims:
            s = sim.script
            if s.follows is not None:
                idm = s.idm if s.idm is not None else IdmParams(desired_speed=v_limit)
                lead = by_id.get(s.follows)
                if lead is None:
                    raise ValidationError(f"agent {s.agent_id!r} follows unknown {s.follows!r}")
                cos_h, sin_h = math.cos(sim.heading), math.sin(sim.heading)
                dx = (lead.x - sim.x) * cos_h + (lead.y - sim.y) * sin_h
                L_self, _, _ = s.dims()
                L_lead, _, _ = lead.script.dims()
                gap = max(dx - (L_self + L_lead) / 2, 0.05)
                accel = idm_accel(sim.speed, lead.speed, gap, idm)
                sim.x += sim.speed * cos_h * dt
                sim.y += sim.speed * sin_h * dt
                sim.speed = max(0.0, sim.speed + accel * dt)
            else:
                x_prev, y_prev = sim.x, sim.y
                sim.x += sim.speed * math.cos(sim.heading) * dt
                sim.y += sim.speed * math.sin(sim.heading) * dt
                shifted = s.shift_y(t_next)
                if shifted is not None:
                    sim.y = shifted
                step = math.hypot(sim.x - x_prev, sim.y - y_prev)
                if s.lane_shift is not None and step > 1e-9:
                    sim.heading = math.atan2(sim.y - y_prev, sim.x - x_prev)
                sim.speed = s.speed_at(t_next)
            if sim.speed > RUNAWAY_SPEED:
                raise RuntimeError(
                    f"runaway agent speed in scenario {scenario.name!r}"
                )

    meta = CaseMeta(scenario_id=scenario.name, driver_id=planner.name, dt=dt)
    return DrivingCase(meta=meta, frames=tuple(frames), crash=crashed)


# -- builtin scenarios -----------------------------------------------------


def _profile(*points: tuple[float, float]) -> tuple[tuple[float, float], ...]:
    return tuple(points)


def builtin_scenarios() -> dict[str, ScenarioSpec]:
    car = AgentKind.CAR
    sc = {}
    sc["free_highway"] = ScenarioSpec(
        name="free_highway", section=RoadSection.HIGHWAY_EXPRESS, duration=40.0,
        ego_speed0=20.0, description="empty express lane, pure speed tracking",
    )
    sc["slow_leader"] = ScenarioSpec(
        name="slow_leader", section=RoadSection.URBAN_REGULAR, duration=45.0,
        ego_speed0=14.0,
        agents=(
            AgentScript("lead", car, x0=40.0, y0=0.0, speed_profile=_profile((0, 8.0), (45, 8.0))),
        ),
        description="steady slow vehicle ahead",
    )
    sc["stop_and_go"] = ScenarioSpec(
        name="stop_and_go", section=RoadSection.URBAN_REGULAR, duration=60.0,
        ego_speed0=10.0,
        agents=(
            AgentScript(
                "lead", car, x0=30.0, y0=0.0,
                speed_profile=_profile(
                    (0, 10.0), (10, 10.0), (15, 1.5), (25, 1.5), (30, 10.0),
                    (42, 10.0), (47, 2.0), (60, 2.0),
                ),
            ),
        ),
        description="leader cycling between creep and flow",
    )
    sc["highway_cut_in"] = ScenarioSpec(
        name="highway_cut_in", section=RoadSection.HIGHWAY_EXPRESS, duration=40.0,
        ego_speed0=30.0,
        agents=(
            AgentScript("far_lead", car, x0=150.0, y0=0.0,
                        speed_profile=_profile((0, 31.0), (40, 31.0))),
            AgentScript(
                "cutter", car, x0=18.0, y0=LANE_WIDTH,
                speed_profile=_profile((0, 26.0), (40, 26.0)),
                lane_shift=(8.0, 12.0, LANE_WIDTH, 0.0),
            ),
        ),
        description="neighbour merges into the gap ahead",
    )
    followers = []
    prev = "p0"
    for i in range(1, 4):
        followers.append(
            AgentScript(
                f"p{i}", car, x0=150.0 - 18.0 * i, y0=0.0,
                speed_profile=_profile((0, 12.0),),
                follows=prev,
                idm=IdmParams(desired_speed=15.0, headway=1.4, min_gap=2.5,
                              max_accel=1.4, comfort_decel=2.0),
            )
        )
        prev = f"p{i}"
    sc["platoon"] = ScenarioSpec(
        name="platoon", section=RoadSection.URBAN_REGULAR, duration=60.0,
        ego_speed0=12.0,
        agents=(
            AgentScript(
                "p0", car, x0=150.0, y0=0.0,
                speed_profile=_profile(
                    (0, 12.0), (20, 12.0), (25, 5.0), (35, 5.0), (40, 12.0), (60, 12.0)
                ),
            ),
            *followers,
        ),
        description="speed wave travelling down a string of followers",
    )
    sc["intersection_pedestrian"] = ScenarioSpec(
        name="intersection_pedestrian", section=RoadSection.URBAN_INTERSECTION,
        duration=30.0, ego_speed0=7.0,
        agents=(
            AgentScript(
                "walker", AgentKind.PEDESTRIAN, x0=45.0, y0=-8.0, heading=math.pi / 2,
                speed_profile=_profile((0, 0.0), (6, 0.0), (7, 1.4), (30, 1.4)),
            ),
        ),
        description="pedestrian steps off the kerb ahead",
    )
    sc["intersection_cyclist"] = ScenarioSpec(
        name="intersection_cyclist", section=RoadSection.URBAN_INTERSECTION,
        duration=30.0, ego_speed0=8.0,
        agents=(
            AgentScript(
                "rider", AgentKind.CYCLIST, x0=55.0, y0=14.0, heading=-math.pi / 2,
                speed_profile=_profile((0, 4.0), (30, 4.0)),
            ),
        ),
        description="cyclist crossing from the far side",
    )
    sc["dense_urban"] = ScenarioSpec(
        name="dense_urban", section=RoadSection.URBAN_REGULAR, duration=50.0,
        ego_speed0=11.0,
        agents=(
            AgentScript("lead", car, x0=35.0, y0=0.0,
                        speed_profile=_profile((0, 9.0), (50, 9.0))),
            AgentScript("oncoming_1", car, x0=140.0, y0=-LANE_WIDTH, heading=math.pi,
                        speed_profile=_profile((0, 12.0), (50, 12.0))),
            AgentScript("oncoming_2", AgentKind.TRUCK, x0=220.0, y0=-LANE_WIDTH,
                        heading=math.pi, speed_profile=_profile((0, 10.0), (50, 10.0))),
            AgentScript("parked_1", car, x0=60.0, y0=LANE_WIDTH * 0.95,
                        speed_profile=_profile((0, 0.0),)),
            AgentScript("parked_2", car, x0=95.0, y0=LANE_WIDTH * 0.95,
                        speed_profile=_profile((0, 0.0),)),
            AgentScript("rider", AgentKind.CYCLIST, x0=170.0, y0=LANE_WIDTH * 0.9,
                        speed_profile=_profile((0, 5.0), (50, 5.0))),
        ),
        description="mixed urban traffic both ways plus parked cars",
    )
    return sc


def generate_scenario(name: str, seed: int = 0) -> ScenarioSpec:
    """Builtin scenario with seeded jitter on agent positions and speeds.

    Placement is retried until the initial frame is overlap-free; a
    scenario that cannot be placed raises.
    """
    base = builtin_scenarios().get(name)
    if base is None:
        raise ValidationError(
            f"unknown scenario {name!r}; available: {', '.join(sorted(builtin_scenarios()))}"
        )
    rng = np.random.default_rng(seed)
    for _ in range(200):
        agents = []
        for s in base.agents:
            dx = float(rng.uniform(-4.0, 4.0)) if s.speed_profile[0][1] > 0 else 0.0
            dv = float(rng.uniform(0.9, 1.1))
            profile = tuple((t, v * dv) for t, v in s.speed_profile)
            agents.append(replace(s, x0=s.x0 + dx, speed_profile=profile))
        cand = replace(base, agents=tuple(agents))
        probe = run_probe_frame(cand)
        if not frame_has_crash(probe) and not _agents_overlap(probe):
            return cand
    raise ValidationError(f"could not place scenario {name!r} without overlap")


def _agents_overlap(frame: SceneFrame) -> bool:
    """Any agent-agent box overlap in the frame (ego handled separately)."""
    from .kinematics import boxes_overlap

    agents = frame.agents
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            if boxes_overlap(agents[i], agents[j]):
                return True
    return False


def run_probe_frame(scenario: ScenarioSpec) -> SceneFrame:
    """Initial frame of a scenario without running the loop."""
    road = scenario.road()
    ego = EgoState(
        x=scenario.ego_x0, y=scenario.ego_y0, heading=0.0, speed=scenario.ego_speed0,
        length=EGO_LENGTH, width=EGO_WIDTH, mass=EGO_MASS, section=scenario.section,
    )
    agents = []
    for s in scenario.agents:
        L, W, M = s.dims()
        y0 = s.shift_y(0.0) if s.lane_shift else s.y0
        agents.append(
            AgentState(agent_id=s.agent_id, kind=s.kind, x=s.x0, y=y0,
                       heading=s.heading, speed=s.speed_at(0.0),
                       length=L, width=W, mass=M)
        )
    return SceneFrame(t=0.0, ego=ego, agents=tuple(agents), road=road)


def make_benchmark_scenario(n_agents: int = 20, duration: float = 60.0) -> ScenarioSpec:
    """Dense two-way column used for throughput measurements."""
    agents = []
    for i in range(n_agents):
        same_dir = i % 2 == 0
        rank = i // 2
        if same_dir:
            agents.append(
                AgentScript(
                    f"fwd_{rank}", AgentKind.CAR, x0=30.0 + 16.0 * rank, y0=0.0,
                    speed_profile=_profile((0, 9.0), (duration, 9.0)),
                )
            )
        else:
            agents.append(
                AgentScript(
                    f"rev_{rank}", AgentKind.CAR, x0=80.0 + 14.0 * rank, y0=-LANE_WIDTH,
                    heading=math.pi,
                    speed_profile=_profile((0, 11.0), (duration, 11.0)),
                )
            )
    return ScenarioSpec(
        name=f"benchmark_{n_agents}", section=RoadSection.URBAN_REGULAR,
        duration=duration, ego_speed0=9.0, agents=tuple(agents),
        description="throughput benchmark column",
    )


def scenario_from_mapping(m: dict) -> ScenarioSpec:
    """Build a scenario from a plain mapping (YAML-friendly)."""
    try:
        agents = []
        for a in m.get("agents", []):
            agents.append(
                AgentScript(
                    agent_id=str(a["id"]),
                    kind=AgentKind(a.get("kind", "car")),
                    x0=float(a["x"]), y0=float(a["y"]),
                    heading=float(a.get("heading", 0.0)),
                    speed_profile=tuple(
                        (float(t), float(v)) for t, v in a.get("speed_profile", [[0.0, 0.0]])
                    ),
                    follows=a.get("follows"),
                    lane_shift=tuple(float(x) for x in a["lane_shift"]) if "lane_shift" in a else None,
                    length=float(a["length"]) if "length" in a else None,
                    width=float(a["width"]) if "width" in a else None,
                    mass=float(a["mass"]) if "mass" in a else None,
                )
            )
        return ScenarioSpec(
            name=str(m["name"]),
            section=RoadSection(m.get("section", "urban_regular")),
            duration=float(m["duration"]),
            ego_speed0=float(m.get("ego_speed", 10.0)),
            ego_x0=float(m.get("ego_x", 0.0)),
            ego_y0=float(m.get("ego_y", 0.0)),
            agents=tuple(agents),
            gradient=float(m.get("gradient", 0.0)),
            rolling_coeff=float(m.get("rolling_coeff", 0.015)),
            description=str(m.get("description", "")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"bad scenario definition: {e}") from None


# -- synthetic rating oracle ----------------------------------------------


CRASH_RATING_MAX = 20.0


def oracle_true_score(normalized: np.ndarray, weights: SegmentWeights,
                      thresholds: tuple[float, float] = DEFAULT_SEGMENT_THRESHOLDS) -> float:
    """Self-consistent integrated score for one normalized row.

    Scans segments best-first and keeps the first whose integrated value
    lands inside that segment's own rating band; if none is consistent,
    the segment whose value sits closest to its band is used.
    """
    lo, hi = thresholds
    bands = {
        Level.HIGH: (hi, math.inf),
        Level.MID: (lo, hi),
        Level.LOW: (-math.inf, lo),
    }
    x = np.asarray(normalized, dtype=float)
    fallback = None
    for level in (Level.HIGH, Level.MID, Level.LOW):
        s = float(weights.row(level) @ x + weights.offset)
        a, b = bands[level]
        if a < s <= b:
            return s
        dist = max(a - s, s - b, 0.0)
        if fallback is None or dist < fallback[0]:
            fallback = (dist, s)
    return fallback[1]


def synthetic_ratings(true_score: float, crash: bool, n_raters: int,
                      sigma: float, rng: np.random.Generator) -> tuple[float, ...]:
    """Per-rater scores: crashes draw from the low uniform band."""
    if crash:
        vals = rng.uniform(0.0, CRASH_RATING_MAX, size=n_raters)
    else:
        vals = np.clip(true_score + rng.normal(0.0, sigma, size=n_raters), 0.0, 100.0)
    return tuple(float(v) for v in vals)


_TERM_SPANS = ((0.0, 2.5), (0.0, 1.0), (0.0, 25.0), (0.0, 60.0))


def synthetic_rated_corpus(n_cases: int,
                           n_raters: int = 40,
                           rating_sigma: float = 3.0,
                           case_sigma: float = 1.5,
                           crash_fraction: float = 0.05,
                           seed: int = 0,
                           weights: SegmentWeights = DEFAULT_WEIGHTS,
                           thresholds: tuple[float, float] = DEFAULT_SEGMENT_THRESHOLDS,
                           ) -> list[RatedCase]:
    """Directly synthesised rated corpus with known integrator weights.

    Raw term scores are drawn uniformly over fixed per-term spans; the
    oracle normalizes them with the same corpus calibration a fitter will
    recompute, integrates with the given weights, adds a per-case
    idiosyncrasy term, and hands each rater a noisy copy.
    """
    rng = np.random.default_rng(seed)
    raw = np.column_stack(
        [rng.uniform(lo, hi, size=n_cases) for lo, hi in _TERM_SPANS]
    )
    cal = calibrate_normalization(raw)
    feats = normalize_matrix(raw, cal)
    crash_flags = rng.random(n_cases) < crash_fraction
    cases = []
    for i in range(n_cases):
        crash = bool(crash_flags[i])
        base = oracle_true_score(feats[i], weights, thresholds)
        true = base + float(rng.normal(0.0, case_sigma))
        ratings = synthetic_ratings(true, crash, n_raters, rating_sigma, rng)
        cases.append(
            RatedCase(
                case_id=f"syn_{i:04d}",
                terms=tuple(float(v) for v in raw[i]),
                ratings=ratings,
                crash=crash,
            )
        )
    return cases
