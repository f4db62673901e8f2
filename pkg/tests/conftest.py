"""Shared test fixtures and builders.

Most tests construct small synthetic cases by hand; the builders here keep
that terse. The acceptance suite additionally registers one pass/fail line
per criterion, printed in the terminal summary.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
import pytest

from s2o.pipeline import CalibrationTable, LinearSvmModel, SvmBoundary, DEFAULT_WEIGHTS
from s2o.modelfile import ModelFile
from s2o.types import (
    AgentKind,
    AgentState,
    CaseMeta,
    DrivingCase,
    EgoState,
    RoadContext,
    RoadSection,
    SceneFrame,
)

# -- domain object builders -------------------------------------------------


def make_ego(x=0.0, y=0.0, heading=0.0, speed=10.0, section=RoadSection.URBAN_REGULAR,
             length=4.5, width=1.8, mass=1500.0, **kw) -> EgoState:
    return EgoState(x=x, y=y, heading=heading, speed=speed, length=length,
                    width=width, mass=mass, section=section, **kw)


def make_agent(agent_id="a1", x=30.0, y=0.0, heading=0.0, speed=0.0,
               kind=AgentKind.CAR, length=4.5, width=1.8, mass=1500.0,
               v_long=None) -> AgentState:
    return AgentState(agent_id=agent_id, kind=kind, x=x, y=y, heading=heading,
                      speed=speed, length=length, width=width, mass=mass,
                      v_long=v_long)


def make_frame(t=0.0, ego: Optional[EgoState] = None,
               agents: Sequence[AgentState] = (),
               road: Optional[RoadContext] = None) -> SceneFrame:
    return SceneFrame(t=t, ego=ego if ego is not None else make_ego(),
                      agents=tuple(agents),
                      road=road if road is not None else RoadContext())


def straight_case(speeds: Sequence[float], dt: float = 0.1,
                  section=RoadSection.URBAN_REGULAR,
                  road: Optional[RoadContext] = None,
                  agents_at=None, crash: bool = False,
                  heading: float = 0.0, y: float = 0.0) -> DrivingCase:
    """Ego driving straight with the given speed samples.

    Positions integrate the speeds (trapezoid) so position-derived speeds
    agree with the logged ones. ``agents_at(i, t)`` may supply per-frame
    agent tuples.
    """
    road = road if road is not None else RoadContext()
    x = 0.0
    frames = []
    for i, v in enumerate(speeds):
        t = i * dt
        if i > 0:
            x += 0.5 * (speeds[i - 1] + v) * dt
        ego = make_ego(x=x, y=y, heading=heading, speed=float(v), section=section)
        agents = tuple(agents_at(i, t)) if agents_at is not None else ()
        frames.append(SceneFrame(t=t, ego=ego, agents=agents, road=road))
    return DrivingCase(frames=tuple(frames), crash=crash,
                       meta=CaseMeta(scenario_id="synthetic", driver_id="test", dt=dt))


def threshold_model(ranges=None) -> ModelFile:
    """Model whose classifier thresholds the mean normalized score at 75/85.

    decision(x) = mean(x) - cut, so segment boundaries sit exactly where a
    hand calculation expects them; calibration defaults to simple spans.
    """
    if ranges is None:
        ranges = {"safety": (0.0, 10.0), "efficiency": (0.0, 1.0),
                  "comfort": (0.0, 20.0), "energy": (0.0, 50.0)}
    cal = CalibrationTable(ranges=ranges)
    svm = LinearSvmModel(
        low_mid=SvmBoundary(weights=(0.25, 0.25, 0.25, 0.25), bias=-75.0),
        mid_high=SvmBoundary(weights=(0.25, 0.25, 0.25, 0.25), bias=-85.0),
    )
    return ModelFile(calibration=cal, svm=svm, weights=DEFAULT_WEIGHTS)


@pytest.fixture
def model() -> ModelFile:
    return threshold_model()


def rel_err(got: float, want: float) -> float:
    if want == 0.0:
        return abs(got)
    return abs(got - want) / abs(want)


# -- acceptance criterion bookkeeping ---------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


class _Criterion:
    def __init__(self, name: str):
        self.name = name
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        note = self.detail if ok else (self.detail + f" [{exc}]").strip()
        ACCEPTANCE_RESULTS.append((self.name, ok, note))
        return False


def criterion(name: str) -> _Criterion:
    return _Criterion(name)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        line = f"{status}  criterion {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
