"""Trajectory scoring for driving decision cases.

Four physical factor scores (risk field, time efficiency, ride comfort,
energy use) are normalized against corpus calibration ranges, the case is
assigned a quality segment by a pair of ordinal linear boundaries, and a
segment-specific weight row integrates the terms into one score, with a
hard zero for crash cases. The fitting side recovers the calibration,
the boundaries and the weights from human-rated corpora.
"""

from .caselog import parse_case, serialize_case
from .config import Config, load_config
from .errors import (
    CaseLogError,
    DegenerateGeometryError,
    FitError,
    StreamOrderError,
    ValidationError,
)
from .experience import (
    ComfortParams,
    VehicleParams,
    comfort_score,
    efficiency_score,
    energy_score,
    instantaneous_efficiency,
    power_breakdown,
)
from .fitting import (
    FitResult,
    RatedCase,
    calibrate_normalization,
    cross_validate,
    filter_raters,
    fit_dataset,
    fit_weights,
    ground_truth,
    load_rated_dataset,
    save_rated_dataset,
    train_svm,
)
from .harness import (
    IdmParams,
    PLANNERS,
    ScenarioSpec,
    builtin_scenarios,
    generate_scenario,
    idm_accel,
    run_closed_loop,
    synthetic_rated_corpus,
)
from .kinematics import CaseTable, derive_kinematics, detect_crash, resample_uniform
from .modelfile import ModelFile, default_model
from .pipeline import (
    DEFAULT_SEGMENT_THRESHOLDS,
    DEFAULT_WEIGHTS,
    TERMS,
    CalibrationTable,
    EvalParams,
    EvaluationReport,
    LinearSvmModel,
    NormalizedScores,
    SegmentWeights,
    TermScores,
    classify_segment,
    crash_revision,
    evaluate_case,
    integrate,
    normalize,
    term_scores,
)
from .safety import DsfParams, HeatmapSpec, ego_risk, risk_heatmap, safety_score
from .streaming import StreamEvaluator
from .types import (
    AgentKind,
    AgentState,
    DrivingCase,
    EgoState,
    Level,
    RoadContext,
    RoadSection,
    SceneFrame,
)

__version__ = "0.1.0"

__all__ = [
    "AgentKind",
    "AgentState",
    "CalibrationTable",
    "CaseLogError",
    "CaseTable",
    "ComfortParams",
    "Config",
    "DEFAULT_SEGMENT_THRESHOLDS",
    "DEFAULT_WEIGHTS",
    "DegenerateGeometryError",
    "DrivingCase",
    "DsfParams",
    "EgoState",
    "EvalParams",
    "EvaluationReport",
    "FitError",
    "FitResult",
    "HeatmapSpec",
    "IdmParams",
    "Level",
    "LinearSvmModel",
    "ModelFile",
    "NormalizedScores",
    "PLANNERS",
    "RatedCase",
    "RoadContext",
    "RoadSection",
    "ScenarioSpec",
    "SceneFrame",
    "SegmentWeights",
    "StreamEvaluator",
    "StreamOrderError",
    "TERMS",
    "TermScores",
    "ValidationError",
    "VehicleParams",
    "builtin_scenarios",
    "calibrate_normalization",
    "classify_segment",
    "comfort_score",
    "crash_revision",
    "cross_validate",
    "default_model",
    "derive_kinematics",
    "detect_crash",
    "efficiency_score",
    "ego_risk",
    "energy_score",
    "evaluate_case",
    "filter_raters",
    "fit_dataset",
    "fit_weights",
    "generate_scenario",
    "ground_truth",
    "idm_accel",
    "instantaneous_efficiency",
    "integrate",
    "load_config",
    "load_rated_dataset",
    "normalize",
    "parse_case",
    "power_breakdown",
    "resample_uniform",
    "risk_heatmap",
    "run_closed_loop",
    "safety_score",
    "save_rated_dataset",
    "serialize_case",
    "synthetic_rated_corpus",
    "term_scores",
    "train_svm",
]
