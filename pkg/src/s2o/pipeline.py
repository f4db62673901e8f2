"""Score fusion: normalization, segment classification, weighted integration, crash veto.

Raw factor scores (higher = worse) are mapped per term onto [60, 100]
(higher = better) with a calibrated max-min transform, the four
normalized scores are placed into a quality segment by two ordinal linear
boundaries, the segment picks a weight row for the linear integrator, and
a crash overrides everything to zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import ValidationError
from .experience import ComfortParams, VehicleParams, comfort_score, efficiency_score, energy_score
from .kinematics import CaseTable, detect_crash
from .safety import DsfParams, safety_score
from .types import LEVELS, DrivingCase, Level

TERMS = ("safety", "efficiency", "comfort", "energy")

REPORT_SCHEMA = "s2o-report/1"

NORMALIZED_TOP = 100.0
NORMALIZED_SPAN = 40.0


@dataclass(frozen=True)
class TermScores:
    """Raw factor scores for one case (higher = worse)."""

    safety: float
    efficiency: float
    comfort: float
    energy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.safety, self.efficiency, self.comfort, self.energy])


@dataclass(frozen=True)
class NormalizedScores:
    """Calibrated scores on [60, 100] (higher = better)."""

    safety: float
    efficiency: float
    comfort: float
    energy: float

    def __post_init__(self):
        for name in TERMS:
            v = getattr(self, name)
            if not (60.0 - 1e-9 <= v <= 100.0 + 1e-9):
                raise ValidationError(f"normalized {name} out of [60, 100]: {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.safety, self.efficiency, self.comfort, self.energy])


@dataclass(frozen=True)
class CalibrationTable:
    """Per-term raw-score ranges used by the max-min normalization."""

    ranges: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        for term in TERMS:
            if term not in self.ranges:
                raise ValidationError(f"calibration missing term {term!r}")
            lo, hi = self.ranges[term]
            if not hi > lo:
                raise ValidationError(
                    f"calibration for {term!r} must have max > min, got [{lo}, {hi}]"
                )


def normalize_value(value: float, lo: float, hi: float) -> float:
    t = (value - lo) / (hi - lo)
    t = min(1.0, max(0.0, t))
    return NORMALIZED_TOP - NORMALIZED_SPAN * t


def normalize(raw: TermScores, cal: CalibrationTable) -> NormalizedScores:
    """Map raw scores onto [60, 100], clamping outside the calibrated range.

    Raw scores are higher-is-worse, so the calibrated minimum maps to 100
    and the maximum to 60.
    """
    vals = {}
    for term in TERMS:
        lo, hi = cal.ranges[term]
        vals[term] = normalize_value(getattr(raw, term), lo, hi)
    return NormalizedScores(**vals)


@dataclass(frozen=True)
class SvmBoundary:
    weights: tuple[float, float, float, float]
    bias: float

    def decision(self, x: np.ndarray) -> float:
        return float(np.dot(np.asarray(self.weights), x) + self.bias)


@dataclass(frozen=True)
class LinearSvmModel:
    """Two ordinal hyperplanes over the normalized scores.

    ``low_mid`` separates low from {mid, high}; ``mid_high`` separates
    {low, mid} from high. Positive decision values vote for the upper
    side in both cases.
    """

    low_mid: SvmBoundary
    mid_high: SvmBoundary

    def classify(self, x: np.ndarray) -> Level:
        if self.mid_high.decision(x) > 0.0:
            return Level.HIGH
        if self.low_mid.decision(x) > 0.0:
            return Level.MID
        return Level.LOW


def classify_segment(scores: NormalizedScores, model: LinearSvmModel, crash: bool) -> Level:
    """Quality segment of a case; a crash short-circuits to LOW."""
    if crash:
        return Level.LOW
    return model.classify(scores.as_array())


@dataclass(frozen=True)
class SegmentWeights:
    """Per-segment weight rows plus the shared offset of the integrator."""

    low: Mapping[str, float]
    mid: Mapping[str, float]
    high: Mapping[str, float]
    offset: float = 10.0

    def __post_init__(self):
        for level in LEVELS:
            row = getattr(self, level.value)
            for term in TERMS:
                if term not in row:
                    raise ValidationError(f"{level.value} weights missing term {term!r}")
                if row[term] < 0:
                    raise ValidationError(
                        f"{level.value} weight for {term!r} must be >= 0, got {row[term]}"
                    )

    def row(self, level: Level) -> np.ndarray:
        r = getattr(self, level.value)
        return np.array([r[t] for t in TERMS])


DEFAULT_WEIGHTS = SegmentWeights(
    low={"safety": 0.165, "efficiency": 0.235, "comfort": 0.010, "energy": 0.280},
    mid={"safety": 0.160, "efficiency": 0.343, "comfort": 0.161, "energy": 0.166},
    high={"safety": 0.010, "efficiency": 0.103, "comfort": 0.507, "energy": 0.238},
    offset=10.0,
)

# Ground-truth segment cut points on the 0-100 rating scale: low is
# [0, 75], mid (75, 85], high (85, 100].
DEFAULT_SEGMENT_THRESHOLDS = (75.0, 85.0)


def integrate(scores: NormalizedScores, weights: SegmentWeights, level: Level) -> float:
    """Weighted sum of the normalized scores plus the shared offset."""
    return float(np.dot(weights.row(level), scores.as_array()) + weights.offset)


def crash_revision(score: float, crash: bool) -> float:
    """A crash voids the score entirely; otherwise pass through unchanged."""
    return 0.0 if crash else score


@dataclass(frozen=True)
class EvalParams:
    """Physical-model parameters used by the four factor scorers."""

    dsf: DsfParams = field(default_factory=DsfParams)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    comfort: ComfortParams = field(default_factory=ComfortParams)


@dataclass(frozen=True)
class EvaluationReport:
    """Everything the pipeline produced for one case."""

    case_id: str
    raw: TermScores
    normalized: NormalizedScores
    segment: Level
    crash: bool
    integrated: float
    final: float
    t: Optional[float] = None  # set on streaming emissions
    frames: Optional[int] = None

    def to_record(self) -> dict:
        rec = {
            "schema": REPORT_SCHEMA,
            "case": self.case_id,
            "crash": self.crash,
            "segment": self.segment.value,
            "raw": {t: getattr(self.raw, t) for t in TERMS},
            "normalized": {t: getattr(self.normalized, t) for t in TERMS},
            "integrated": self.integrated,
            "final": self.final,
        }
        if self.t is not None:
            rec["t"] = self.t
        if self.frames is not None:
            rec["frames"] = self.frames
        return rec

    @staticmethod
    def from_record(rec: dict) -> "EvaluationReport":
        return EvaluationReport(
            case_id=rec["case"],
            raw=TermScores(**rec["raw"]),
            normalized=NormalizedScores(**rec["normalized"]),
            segment=Level(rec["segment"]),
            crash=bool(rec["crash"]),
            integrated=float(rec["integrated"]),
            final=float(rec["final"]),
            t=rec.get("t"),
            frames=rec.get("frames"),
        )


def term_scores(case: DrivingCase, params: EvalParams, table: CaseTable | None = None) -> TermScores:
    if table is None:
        table = CaseTable(case)
    return TermScores(
        safety=safety_score(case, params.dsf, table),
        efficiency=efficiency_score(case, table),
        comfort=comfort_score(case, params.comfort, table),
        energy=energy_score(case, params.vehicle, table),
    )


def evaluate_case(case: DrivingCase, model, params: EvalParams | None = None, case_id: str = "") -> EvaluationReport:
    """Run the full pipeline on one case.

    ``model`` supplies ``calibration``, ``svm`` and ``weights`` (see
    ``modelfile.ModelFile``). The crash flag is the recorded one OR a
    fresh geometric overlap check, so unlabeled contact still vetoes.
    """
    if params is None:
        params = EvalParams()
    table = CaseTable(case)
    crash = bool(case.crash) or detect_crash(case)
    raw = term_scores(case, params, table)
    scores = normalize(raw, model.calibration)
    segment = classify_segment(scores, model.svm, crash)
    integrated = integrate(scores, model.weights, segment)
    final = crash_revision(integrated, crash)
    if not crash and not math.isfinite(final):
        raise ValidationError(f"non-finite final score for case {case_id!r}")
    return EvaluationReport(
        case_id=case_id or case.meta.scenario_id,
        raw=raw,
        normalized=scores,
        segment=segment,
        crash=crash,
        integrated=integrated,
        final=final,
    )
