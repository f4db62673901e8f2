"""Configuration loading: YAML file -> validated parameter objects.

Resolution order: explicit --config path, then the S2O_CONFIG environment
variable, then built-in defaults. Unknown keys are rejected by name so a
typo cannot silently fall back to a default.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import yaml

from .errors import ValidationError
from .experience import ComfortParams, VehicleParams
from .pipeline import DEFAULT_SEGMENT_THRESHOLDS, EvalParams
from .safety import DsfParams
from .types import DEFAULT_SPEED_LIMITS_KMH, RoadSection, RoiSpec

ENV_CONFIG = "S2O_CONFIG"


@dataclass(frozen=True)
class SvmTrainParams:
    regularization: float = 1e-3
    iterations: int = 1500

    def __post_init__(self):
        if self.regularization <= 0:
            raise ValidationError("svm.regularization must be > 0")
        if self.iterations < 1:
            raise ValidationError("svm.iterations must be >= 1")


@dataclass(frozen=True)
class CvParams:
    repeats: int = 5
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.repeats < 1:
            raise ValidationError("cv.repeats must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("cv.train_fraction must be in (0, 1)")


@dataclass(frozen=True)
class Config:
    params: EvalParams = field(default_factory=EvalParams)
    speed_limits_kmh: dict = field(
        default_factory=lambda: {s.value: v for s, v in DEFAULT_SPEED_LIMITS_KMH.items()}
    )
    resample_dt: Optional[float] = None
    model_path: Optional[str] = None
    seed: int = 0
    segment_thresholds: tuple[float, float] = DEFAULT_SEGMENT_THRESHOLDS
    robust_calibration: bool = False
    svm: SvmTrainParams = field(default_factory=SvmTrainParams)
    cv: CvParams = field(default_factory=CvParams)

    def __post_init__(self):
        if self.resample_dt is not None and self.resample_dt <= 0:
            raise ValidationError("resample_dt must be > 0")
        th = self.segment_thresholds
        if len(th) != 2 or not 0 < th[0] < th[1] < 100:
            raise ValidationError(
                f"segment_thresholds must be two increasing values in (0, 100), got {th}"
            )
        for key in self.speed_limits_kmh:
            try:
                RoadSection(key)
            except ValueError:
                raise ValidationError(f"speed_limits_kmh: unknown section {key!r}") from None


def _build(cls, mapping: dict, context: str):
    if not isinstance(mapping, dict):
        raise ValidationError(f"config section {context!r} must be a mapping")
    allowed = set(cls.__dataclass_fields__)
    for key in mapping:
        if key not in allowed:
            raise ValidationError(f"config: unknown key {context}.{key}")
    return cls(**mapping)


def config_from_mapping(raw: dict) -> Config:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a mapping")
    known = {
        "dsf", "roi", "vehicle", "comfort", "speed_limits_kmh", "resample_dt",
        "model", "seed", "segment_thresholds", "robust_calibration", "svm", "cv",
    }
    for key in raw:
        if key not in known:
            raise ValidationError(f"config: unknown key {key}")

    dsf_map = dict(raw.get("dsf", {}))
    roi_map = raw.get("roi")
    if roi_map is not None:
        dsf_map["roi"] = _build(RoiSpec, roi_map, "roi")
    dsf = _build(DsfParams, dsf_map, "dsf")
    vehicle = _build(VehicleParams, raw.get("vehicle", {}), "vehicle")
    comfort = _build(ComfortParams, raw.get("comfort", {}), "comfort")

    limits = {s.value: v for s, v in DEFAULT_SPEED_LIMITS_KMH.items()}
    for key, value in (raw.get("speed_limits_kmh") or {}).items():
        limits[str(key)] = float(value)

    thresholds = raw.get("segment_thresholds", DEFAULT_SEGMENT_THRESHOLDS)
    return Config(
        params=EvalParams(dsf=dsf, vehicle=vehicle, comfort=comfort),
        speed_limits_kmh=limits,
        resample_dt=raw.get("resample_dt"),
        model_path=raw.get("model"),
        seed=int(raw.get("seed", 0)),
        segment_thresholds=tuple(float(x) for x in thresholds),
        robust_calibration=bool(raw.get("robust_calibration", False)),
        svm=_build(SvmTrainParams, raw.get("svm", {}), "svm"),
        cv=_build(CvParams, raw.get("cv", {}), "cv"),
    )


def load_config(path: Union[str, Path, None] = None) -> Config:
    """Load configuration from ``path``, else $S2O_CONFIG, else defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is None:
        return Config()
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ValidationError(f"config {path}: invalid YAML ({e})") from None
    try:
        return config_from_mapping(raw)
    except TypeError as e:
        raise ValidationError(f"config {path}: {e}") from None


def road_context_from_config(cfg: Config, gradient: float = 0.0, rolling_coeff: float = 0.015):
    from .types import RoadContext

    return RoadContext(
        speed_limits_kmh={RoadSection(k): float(v) for k, v in cfg.speed_limits_kmh.items()},
        gradient=gradient,
        rolling_coeff=rolling_coeff,
    )
