"""Model persistence: calibration + classifier + integrator weights in one JSON file.

The on-disk form is canonical (sorted keys, two-space indent, repr floats)
so that load -> save round-trips are byte-identical.
"""
from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Union

from .errors import ValidationError
from .pipeline import (
    DEFAULT_SEGMENT_THRESHOLDS,
    TERMS,
    CalibrationTable,
    LinearSvmModel,
    SegmentWeights,
    SvmBoundary,
)

SCHEMA = "s2o-model/1"


@dataclass(frozen=True)
class ModelFile:
    """Everything evaluate needs beyond the physics parameters."""

    calibration: CalibrationTable
    svm: LinearSvmModel
    weights: SegmentWeights
    thresholds: tuple[float, float] = DEFAULT_SEGMENT_THRESHOLDS

    def to_payload(self) -> dict:
        return {
            "schema": SCHEMA,
            "calibration": {t: list(self.calibration.ranges[t]) for t in TERMS},
            "svm": {
                "low_mid": {
                    "weights": list(self.svm.low_mid.weights),
                    "bias": self.svm.low_mid.bias,
                },
                "mid_high": {
                    "weights": list(self.svm.mid_high.weights),
                    "bias": self.svm.mid_high.bias,
                },
            },
            "weights": {
                "low": dict(self.weights.low),
                "mid": dict(self.weights.mid),
                "high": dict(self.weights.high),
                "offset": self.weights.offset,
            },
            "thresholds": list(self.thresholds),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True, indent=2) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @staticmethod
    def from_payload(payload: dict) -> "ModelFile":
        if payload.get("schema") != SCHEMA:
            raise ValidationError(
                f"unsupported model schema {payload.get('schema')!r}, expected {SCHEMA!r}"
            )
        try:
            cal = CalibrationTable(
                ranges={t: (float(lo), float(hi)) for t, (lo, hi) in payload["calibration"].items()}
            )
            svm = LinearSvmModel(
                low_mid=SvmBoundary(
                    weights=tuple(float(w) for w in payload["svm"]["low_mid"]["weights"]),
                    bias=float(payload["svm"]["low_mid"]["bias"]),
                ),
                mid_high=SvmBoundary(
                    weights=tuple(float(w) for w in payload["svm"]["mid_high"]["weights"]),
                    bias=float(payload["svm"]["mid_high"]["bias"]),
                ),
            )
            wrec = payload["weights"]
            weights = SegmentWeights(
                low=dict(wrec["low"]), mid=dict(wrec["mid"]), high=dict(wrec["high"]),
                offset=float(wrec["offset"]),
            )
            thresholds = tuple(float(x) for x in payload.get("thresholds", DEFAULT_SEGMENT_THRESHOLDS))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed model file: missing {e}") from None
        if len(thresholds) != 2 or not thresholds[0] < thresholds[1]:
            raise ValidationError(f"thresholds must be two increasing values, got {thresholds}")
        return ModelFile(calibration=cal, svm=svm, weights=weights, thresholds=thresholds)

    @staticmethod
    def loads(text: str) -> "ModelFile":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"model file is not valid JSON: {e.msg}") from None
        return ModelFile.from_payload(payload)

    @staticmethod
    def load(path: Union[str, Path]) -> "ModelFile":
        return ModelFile.loads(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def default_model() -> ModelFile:
    """The shipped model: synthetic-corpus calibration and classifier, stock weights."""
    data = importlib.resources.files("s2o").joinpath("data/default_model.json")
    return ModelFile.loads(data.read_text(encoding="utf-8"))
