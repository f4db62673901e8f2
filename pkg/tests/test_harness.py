"""Closed-loop simulator, scenario library, planners and the rating oracle."""
import math

import numpy as np
import pytest

from conftest import rel_err
from s2o.caselog import serialize_case
from s2o.errors import ValidationError
from s2o.experience import VehicleParams, energy_score
from s2o.harness import (
    CRASH_RATING_MAX,
    PLANNERS,
    AgentScript,
    ConservativeDriver,
    CrasherDriver,
    IdmParams,
    Planner,
    PlannerDecision,
    ScenarioSpec,
    builtin_scenarios,
    generate_scenario,
    idm_accel,
    make_benchmark_scenario,
    oracle_true_score,
    run_closed_loop,
    run_probe_frame,
    scenario_from_mapping,
    synthetic_rated_corpus,
    synthetic_ratings,
)
from s2o.kinematics import boxes_overlap, derive_kinematics, frame_has_crash
from s2o.pipeline import DEFAULT_WEIGHTS
from s2o.types import AgentKind, DrivingCase, Level, RoadSection

from conftest import straight_case


# -- car-following law --------------------------------------------------------


def test_idm_fixed_points():
    p = IdmParams(desired_speed=20.0)
    assert idm_accel(20.0, None, None, p) == 0.0  # at the desired speed
    assert idm_accel(0.0, None, None, p) == p.max_accel  # standing start
    # matched speeds at exactly the desired gap: interaction term is -1
    assert idm_accel(20.0, 20.0, 32.0, IdmParams(desired_speed=20.0)) == -1.5


def test_idm_brakes_harder_when_closing():
    p = IdmParams(desired_speed=20.0)
    steady = idm_accel(15.0, 15.0, 30.0, p)
    closing = idm_accel(15.0, 10.0, 30.0, p)
    receding = idm_accel(15.0, 20.0, 30.0, p)
    assert closing < steady < receding


def test_idm_validation():
    p = IdmParams(desired_speed=20.0)
    with pytest.raises(ValidationError, match="gap must be positive"):
        idm_accel(10.0, 10.0, 0.0, p)
    with pytest.raises(ValidationError, match="must be positive"):
        IdmParams(desired_speed=-5.0)


def test_idm_follower_settles_at_equilibrium_gap():
    p = IdmParams(desired_speed=15.0)
    v_lead = 10.0
    # stationary point: free(v) = (s*/s)^2 at v = v_lead
    free = 1.0 - (v_lead / p.desired_speed) ** p.exponent
    s_star = p.min_gap + v_lead * p.headway
    s_eq = s_star / math.sqrt(free)

    dt, gap, v = 0.01, 40.0, 10.0
    for _ in range(30000):
        a = idm_accel(v, v_lead, gap, p)
        gap += (v_lead - v) * dt
        v = max(0.0, v + a * dt)
    assert abs(v - v_lead) <= 0.01 * v_lead
    assert abs(gap - s_eq) <= 0.10 * s_eq


# -- closed loop --------------------------------------------------------------


def _platoon_spec(duration=120.0):
    car = AgentKind.CAR
    agents = [AgentScript("p0", car, x0=100.0, y0=0.0,
                          speed_profile=((0.0, 12.0), (duration, 12.0)))]
    for i in range(1, 5):
        agents.append(AgentScript(f"p{i}", car, x0=100.0 - 20.0 * i, y0=0.0,
                                  follows=f"p{i - 1}"))
    return ScenarioSpec(
        name="platoon_eq", section=RoadSection.URBAN_REGULAR, duration=duration,
        ego_speed0=8.0, ego_y0=60.0, agents=tuple(agents),
    )


def test_platoon_followers_reach_leader_speed_and_spacing():
    case = run_closed_loop(_platoon_spec(), ConservativeDriver())
    assert not case.crash
    last = case.frames[-1]
    by_id = {a.agent_id: a for a in last.agents}
    v_lim = 60.0 / 3.6
    free = 1.0 - (12.0 / v_lim) ** 4
    s_eq = (2.0 + 12.0 * 1.5) / math.sqrt(free)
    for i in range(1, 5):
        f, lead = by_id[f"p{i}"], by_id[f"p{i - 1}"]
        assert abs(f.speed - 12.0) <= 0.02 * 12.0
        bumper_gap = (lead.x - f.x) - (lead.length + f.length) / 2
        assert abs(bumper_gap - s_eq) <= 0.10 * s_eq


def test_every_builtin_scenario_simulates():
    names = sorted(builtin_scenarios())
    assert names == [
        "dense_urban", "free_highway", "highway_cut_in", "intersection_cyclist",
        "intersection_pedestrian", "platoon", "slow_leader", "stop_and_go",
    ]
    for name in names:
        spec = generate_scenario(name, seed=3)
        case = run_closed_loop(spec, ConservativeDriver())
        assert len(case.frames) >= 2
        assert case.meta.scenario_id == name
        assert case.meta.driver_id == "conservative"
        if not case.crash:
            assert len(case.frames) == int(round(spec.duration / 0.1)) + 1


def test_crasher_rams_the_slow_leader():
    spec = generate_scenario("slow_leader", seed=0)
    case = run_closed_loop(spec, CrasherDriver())
    assert case.crash
    assert frame_has_crash(case.frames[-1])
    assert not frame_has_crash(case.frames[-2])  # truncated at first contact
    assert case.frames[-1].t < spec.duration


def test_simulation_is_deterministic():
    a = run_closed_loop(generate_scenario("dense_urban", seed=11), ConservativeDriver())
    b = run_closed_loop(generate_scenario("dense_urban", seed=11), ConservativeDriver())
    assert serialize_case(a) == serialize_case(b)


def test_runaway_ego_guard():
    class Floorer(Planner):
        name = "floor"

        def __init__(self):
            super().__init__(lambda vlim: IdmParams(desired_speed=vlim))

        def decide(self, t, x, y, heading, speed, agents, v_limit):
            return PlannerDecision(accel=5.0)

    with pytest.raises(RuntimeError, match="runaway ego speed"):
        run_closed_loop(builtin_scenarios()["free_highway"], Floorer())


def test_runaway_agent_guard():
    spec = ScenarioSpec(
        name="bolt", section=RoadSection.URBAN_REGULAR, duration=20.0,
        ego_speed0=5.0, ego_y0=50.0,
        agents=(AgentScript("a", AgentKind.CAR, x0=100.0, y0=0.0,
                            speed_profile=((0.0, 10.0), (10.0, 250.0))),),
    )
    with pytest.raises(RuntimeError, match="runaway agent speed"):
        run_closed_loop(spec, ConservativeDriver())


def test_planner_registry():
    assert sorted(PLANNERS) == ["aggressive", "conservative", "crasher", "erratic"]
    for name, factory in PLANNERS.items():
        assert factory().name == name


# -- scenario generation ------------------------------------------------------


def test_generate_scenario_is_seeded_and_overlap_free():
    a = generate_scenario("dense_urban", seed=7)
    b = generate_scenario("dense_urban", seed=7)
    c = generate_scenario("dense_urban", seed=8)
    assert a == b
    assert a != c  # jitter actually moved something
    probe = run_probe_frame(a)
    assert not frame_has_crash(probe)
    bodies = list(probe.agents)
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            assert not boxes_overlap(bodies[i], bodies[j])


def test_generate_scenario_unknown_name():
    with pytest.raises(ValidationError, match="unknown scenario 'nope'"):
        generate_scenario("nope")


def test_scenario_spec_validation():
    with pytest.raises(ValidationError, match="duration must be > 0"):
        ScenarioSpec(name="x", section=RoadSection.URBAN_REGULAR,
                     duration=0.0, ego_speed0=5.0)


def test_scenario_from_mapping():
    spec = scenario_from_mapping({
        "name": "merge",
        "section": "highway_express",
        "duration": 12.0,
        "ego_speed": 28.0,
        "agents": [
            {"id": "lead", "x": 60.0, "y": 0.0,
             "speed_profile": [[0.0, 25.0], [12.0, 25.0]]},
            {"id": "tail", "kind": "truck", "x": 20.0, "y": -3.5,
             "follows": "lead", "lane_shift": [2.0, 6.0, -3.5, 0.0]},
        ],
    })
    assert spec.section == RoadSection.HIGHWAY_EXPRESS
    assert spec.agents[1].kind == AgentKind.TRUCK
    assert spec.agents[1].lane_shift == (2.0, 6.0, -3.5, 0.0)
    case = run_closed_loop(spec, ConservativeDriver())
    assert isinstance(case, DrivingCase)

    with pytest.raises(ValidationError, match="bad scenario definition"):
        scenario_from_mapping({"name": "broken"})


def test_benchmark_scenario_density():
    spec = make_benchmark_scenario(n_agents=20, duration=5.0)
    assert len(spec.agents) == 20
    case = run_closed_loop(spec, ConservativeDriver())
    assert not case.crash
    assert all(len(f.agents) == 20 for f in case.frames)


# -- scenario-level physics ---------------------------------------------------


def test_speed_oscillation_costs_more_energy_than_cruise():
    # whole oscillation periods: the signed acceleration power telescopes
    # away, the rolling term matches the cruise, and the v^3 wind term is
    # convex, so the oscillating profile must cost more
    steady = derive_kinematics(straight_case([15.0] * 301))
    omega = 2.0 * math.pi / 10.0  # three full 10 s periods in 30 s
    wobble_speeds = [15.0 + 5.0 * math.sin(omega * k * 0.1) for k in range(301)]
    wobble = derive_kinematics(straight_case(wobble_speeds))
    vp = VehicleParams()
    assert energy_score(wobble, vp) > energy_score(steady, vp)


# -- rating oracle ------------------------------------------------------------


def test_oracle_score_consistent_bands():
    high = oracle_true_score(np.full(4, 100.0), DEFAULT_WEIGHTS)
    assert rel_err(high, 95.8) <= 1e-9
    low = oracle_true_score(np.full(4, 60.0), DEFAULT_WEIGHTS)
    assert rel_err(low, 51.4) <= 1e-9


def test_oracle_falls_back_to_nearest_band():
    # all three segment readings miss their own bands; the mid reading
    # sits closest (1.56 above 85) and wins
    x = np.array([100.0, 100.0, 60.0, 100.0])
    for level in (Level.LOW, Level.MID, Level.HIGH):
        s = float(DEFAULT_WEIGHTS.row(level) @ x + DEFAULT_WEIGHTS.offset)
        if level == Level.LOW:
            assert s > 75.0
        elif level == Level.MID:
            assert s > 85.0
        else:
            assert 75.0 < s <= 85.0
    want = float(DEFAULT_WEIGHTS.row(Level.MID) @ x + DEFAULT_WEIGHTS.offset)
    assert oracle_true_score(x, DEFAULT_WEIGHTS) == pytest.approx(want)


def test_synthetic_ratings_statistics():
    rng = np.random.default_rng(31)
    exact = synthetic_ratings(80.0, crash=False, n_raters=5, sigma=0.0, rng=rng)
    assert exact == (80.0,) * 5

    crash = synthetic_ratings(95.0, crash=True, n_raters=1000, sigma=0.0, rng=rng)
    assert max(crash) <= CRASH_RATING_MAX and min(crash) >= 0.0
    assert np.std(crash) > 1.0  # uniform band, not a constant

    noisy = synthetic_ratings(50.0, crash=False, n_raters=1000, sigma=3.0, rng=rng)
    assert 2.7 <= np.std(noisy) <= 3.3
    assert abs(np.mean(noisy) - 50.0) <= 0.5


def test_synthetic_corpus_shape_and_determinism():
    cases = synthetic_rated_corpus(60, seed=4)
    again = synthetic_rated_corpus(60, seed=4)
    other = synthetic_rated_corpus(60, seed=5)
    assert cases == again
    assert cases != other
    assert [c.case_id for c in cases[:2]] == ["syn_0000", "syn_0001"]
    spans = ((0.0, 2.5), (0.0, 1.0), (0.0, 25.0), (0.0, 60.0))
    for c in cases:
        assert len(c.ratings) == 40
        for v, (lo, hi) in zip(c.terms, spans):
            assert lo <= v <= hi
        if c.crash:
            assert max(c.ratings) <= CRASH_RATING_MAX
    n_crash = sum(c.crash for c in cases)
    assert 0 < n_crash <= 10  # 5% nominal on 60 cases
