"""Case-log reading and writing.

A case log is line-delimited JSON. The first line is a header record::

    {"schema": "s2o-case/1", "scenario": "...", "driver": "...", "crash": false,
     "road": {"speed_limits_kmh": {...}, "gradient": 0.0, "rolling_coeff": 0.015}}

and every following line is one frame::

    {"t": 0.0,
     "ego": {"x": 0, "y": 0, "heading": 0, "speed": 10, "length": 4.5,
             "width": 1.8, "mass": 1500, "section": "urban_regular"},
     "agents": [{"id": "a1", "kind": "car", "x": 30, "y": 0, "heading": 0,
                 "speed": 8, "length": 4.5, "width": 1.8}]}

Optional fields: header ``crash`` (defaults false), ego/agent ``v_long``
(defaults to speed), agent ``mass`` (defaults by kind), ego ``speed``
(null/absent means "derive from positions"). Field names are part of the
format and are frozen in tests.

Parsing infers dt as the median frame gap and resamples to that dt by
linear interpolation when any gap deviates from the median by more than
10%, because the downstream integral scores assume near-uniform sampling.
"""
from __future__ import annotations

import io
import json
import math
from typing import IO, Iterable, Union

from .errors import CaseLogError, ValidationError
from .types import (
    DEFAULT_AGENT_MASS_KG,
    AgentKind,
    AgentState,
    CaseMeta,
    DrivingCase,
    EgoState,
    RoadContext,
    RoadSection,
    SceneFrame,
)

SCHEMA = "s2o-case/1"
RESAMPLE_TOLERANCE = 0.10


def _require(record: dict, key: str, line: int):
    if key not in record:
        raise CaseLogError(f"missing field {key!r}", line)
    return record[key]


def parse_header(record: dict, line: int = 1) -> tuple[RoadContext, CaseMeta, bool]:
    schema = record.get("schema")
    if schema != SCHEMA:
        raise CaseLogError(f"unsupported schema {schema!r}, expected {SCHEMA!r}", line)
    road_rec = record.get("road", {}) or {}
    limits = dict(RoadContext().speed_limits_kmh)
    for key, value in (road_rec.get("speed_limits_kmh") or {}).items():
        try:
            limits[RoadSection(key)] = float(value)
        except ValueError:
            raise CaseLogError(f"unknown road section {key!r}", line) from None
    try:
        road = RoadContext(
            speed_limits_kmh=limits,
            gradient=float(road_rec.get("gradient", 0.0)),
            rolling_coeff=float(road_rec.get("rolling_coeff", 0.015)),
        )
    except ValidationError as e:
        raise CaseLogError(str(e), line) from None
    meta = CaseMeta(
        scenario_id=str(record.get("scenario", "")),
        driver_id=str(record.get("driver", "")),
    )
    crash = bool(record.get("crash", False))
    return road, meta, crash


def parse_agent(rec: dict, line: int) -> AgentState:
    try:
        kind = AgentKind(str(_require(rec, "kind", line)))
    except ValueError:
        raise CaseLogError(f"unknown agent kind {rec.get('kind')!r}", line) from None
    mass = rec.get("mass")
    if mass is None:
        mass = DEFAULT_AGENT_MASS_KG[kind]
    try:
        return AgentState(
            agent_id=str(_require(rec, "id", line)),
            kind=kind,
            x=float(_require(rec, "x", line)),
            y=float(_require(rec, "y", line)),
            heading=float(_require(rec, "heading", line)),
            speed=float(_require(rec, "speed", line)),
            length=float(_require(rec, "length", line)),
            width=float(_require(rec, "width", line)),
            mass=float(mass),
            v_long=None if rec.get("v_long") is None else float(rec["v_long"]),
        )
    except ValidationError as e:
        raise CaseLogError(str(e), line) from None


def parse_frame(record: dict, road: RoadContext, line: int) -> SceneFrame:
    t = float(_require(record, "t", line))
    ego_rec = _require(record, "ego", line)
    try:
        section = RoadSection(str(_require(ego_rec, "section", line)))
    except ValueError:
        raise CaseLogError(f"unknown road section {ego_rec.get('section')!r}", line) from None
    speed = ego_rec.get("speed")
    try:
        ego = EgoState(
            x=float(_require(ego_rec, "x", line)),
            y=float(_require(ego_rec, "y", line)),
            heading=float(_require(ego_rec, "heading", line)),
            speed=math.nan if speed is None else float(speed),
            length=float(_require(ego_rec, "length", line)),
            width=float(_require(ego_rec, "width", line)),
            mass=float(_require(ego_rec, "mass", line)),
            section=section,
            v_long=None if ego_rec.get("v_long") is None else float(ego_rec["v_long"]),
        )
        agents = tuple(parse_agent(a, line) for a in record.get("agents", []))
        return SceneFrame(t=t, ego=ego, agents=agents, road=road)
    except ValidationError as e:
        raise CaseLogError(str(e), line) from None


def parse_case(source: Union[str, bytes, IO]) -> DrivingCase:
    """Parse a complete case log. Raises CaseLogError with the offending line number."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")

    road = None
    meta = CaseMeta()
    crash = False
    frames = []
    lineno = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as e:
            raise CaseLogError(f"invalid JSON ({e.msg})", lineno) from None
        if road is None:
            road, meta, crash = parse_header(record, lineno)
            continue
        frame = parse_frame(record, road, lineno)
        if frames and not frame.t > frames[-1].t:
            raise CaseLogError(
                f"timestamps must strictly increase, got {frames[-1].t} then {frame.t}",
                lineno,
            )
        frames.append(frame)
    if road is None:
        raise CaseLogError("empty log: header record missing", max(lineno, 1))
    try:
        case = DrivingCase(frames=tuple(frames), crash=crash, meta=meta)
    except ValidationError as e:
        raise CaseLogError(str(e), lineno) from None
    return maybe_resample(case)


def maybe_resample(case: DrivingCase) -> DrivingCase:
    """Resample to the median dt when frame gaps vary by more than 10%."""
    times = case.times
    gaps = [b - a for a, b in zip(times, times[1:])]
    dt = case.meta.dt
    if all(abs(g - dt) <= RESAMPLE_TOLERANCE * dt for g in gaps):
        return case
    from .kinematics import resample_uniform

    return resample_uniform(case, dt)


def _ego_record(ego: EgoState) -> dict:
    rec = {
        "x": ego.x,
        "y": ego.y,
        "heading": ego.heading,
        "speed": None if math.isnan(ego.speed) else ego.speed,
        "length": ego.length,
        "width": ego.width,
        "mass": ego.mass,
        "section": ego.section.value,
    }
    if ego.v_long is not None and not math.isnan(ego.v_long) and ego.v_long != ego.speed:
        rec["v_long"] = ego.v_long
    return rec


def _agent_record(agent: AgentState) -> dict:
    rec = {
        "id": agent.agent_id,
        "kind": agent.kind.value,
        "x": agent.x,
        "y": agent.y,
        "heading": agent.heading,
        "speed": agent.speed,
        "length": agent.length,
        "width": agent.width,
        "mass": agent.mass,
    }
    if agent.v_long != agent.speed:
        rec["v_long"] = agent.v_long
    return rec


def serialize_case(case: DrivingCase) -> str:
    """Inverse of parse_case for raw fields (derived kinematics are not stored)."""
    road = case.frames[0].road
    header = {
        "schema": SCHEMA,
        "scenario": case.meta.scenario_id,
        "driver": case.meta.driver_id,
        "crash": case.crash,
        "road": {
            "speed_limits_kmh": {s.value: v for s, v in road.speed_limits_kmh.items()},
            "gradient": road.gradient,
            "rolling_coeff": road.rolling_coeff,
        },
    }
    lines = [json.dumps(header)]
    for frame in case.frames:
        lines.append(
            json.dumps(
                {
                    "t": frame.t,
                    "ego": _ego_record(frame.ego),
                    "agents": [_agent_record(a) for a in frame.agents],
                }
            )
        )
    return "\n".join(lines) + "\n"


def iter_records(stream: IO) -> Iterable[tuple[int, dict]]:
    """Yield (line number, record) pairs from a line stream, skipping blanks."""
    for lineno, raw in enumerate(stream, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            yield lineno, json.loads(raw)
        except json.JSONDecodeError as e:
            raise CaseLogError(f"invalid JSON ({e.msg})", lineno) from None
