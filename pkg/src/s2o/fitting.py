"""Human-rating preprocessing and model fitting.

Pipeline, in order: optional rater filtering on a complete rater-by-case
matrix, per-case trimmed-mean ground truth with threshold labels,
raw-term range calibration, ordinal hinge-loss boundary training, and a
single joint linear program that fits the per-segment integrator weights
(non-negative) together with the shared offset under mean absolute error.

Everything here is deterministic given the inputs and the master seed.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .config import CvParams, SvmTrainParams
from .errors import FitError
from .pipeline import (
    DEFAULT_SEGMENT_THRESHOLDS,
    TERMS,
    CalibrationTable,
    LinearSvmModel,
    SegmentWeights,
    SvmBoundary,
    normalize_value,
)
from .types import LEVELS, Level

RATED_SCHEMA = "s2o-rated/1"
MIN_RATINGS_FOR_TRIM = 10
TRIM_FRACTION = 0.10
VARIANCE_FLOOR = 5.0
OFFSET_CEILING = 30.0
MIN_SEGMENT_CASES = 5

# Internal feature standardisation for the hinge training: [60, 100] -> [-1, 1].
_FEAT_CENTER = 80.0
_FEAT_SCALE = 20.0


@dataclass(frozen=True)
class RatedCase:
    """One case of the fitting dataset: raw term scores plus human ratings."""

    case_id: str
    terms: tuple[float, float, float, float]  # safety, efficiency, comfort, energy (raw)
    ratings: tuple[float, ...]
    crash: bool = False


@dataclass(frozen=True)
class GroundTruth:
    score: float
    level: Level


@dataclass(frozen=True)
class FitResult:
    weights: SegmentWeights
    train_mae: float
    val_mae: float
    repeat_maes: tuple[float, ...]


def filter_raters(matrix: np.ndarray) -> list[int]:
    """Indices of raters worth keeping, from a (raters x cases) score matrix.

    Drops raters whose scores barely move (variance below 5) and raters
    who sit far from everyone else (mean absolute offset from the other
    raters' per-case average above 30). The two rules are applied
    independently against the full matrix, so the outcome does not depend
    on rater order.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] < 1:
        raise FitError(f"rating matrix must be 2-D with at least one case, got {matrix.shape}")
    R = matrix.shape[0]
    drop = np.zeros(R, dtype=bool)
    drop |= np.var(matrix, axis=1) < VARIANCE_FLOOR
    if R >= 2:
        col_sum = matrix.sum(axis=0)
        loo_mean = (col_sum[None, :] - matrix) / (R - 1)
        drop |= np.abs(matrix - loo_mean).mean(axis=1) > OFFSET_CEILING
    retained = [i for i in range(R) if not drop[i]]
    if not retained:
        raise FitError("no raters left after filtering")
    return retained


def ground_truth(ratings: Sequence[float],
                 thresholds: tuple[float, float] = DEFAULT_SEGMENT_THRESHOLDS) -> GroundTruth:
    """Trimmed-mean consensus score and its segment label.

    With at least 10 ratings the top and bottom ceil(10%) are discarded;
    with fewer the mean is untrimmed (and we warn, because a handful of
    ratings is a shaky consensus).
    """
    values = np.asarray(ratings, dtype=float)
    n = len(values)
    if n == 0:
        raise FitError("cannot build ground truth from zero ratings")
    if n >= MIN_RATINGS_FOR_TRIM:
        k = math.ceil(TRIM_FRACTION * n)
        values = np.sort(values)[k : n - k]
    else:
        warnings.warn(
            f"only {n} ratings; ground truth uses the untrimmed mean", stacklevel=2
        )
    score = float(values.mean())
    lo, hi = thresholds
    if score <= lo:
        level = Level.LOW
    elif score <= hi:
        level = Level.MID
    else:
        level = Level.HIGH
    return GroundTruth(score=score, level=level)


def calibrate_normalization(term_rows: Union[np.ndarray, Sequence], robust: bool = False) -> CalibrationTable:
    """Per-term raw ranges from a corpus; robust mode uses the 1st/99th percentiles."""
    arr = np.asarray(
        [row.as_array() if hasattr(row, "as_array") else row for row in term_rows], dtype=float
    )
    if arr.ndim != 2 or arr.shape[1] != len(TERMS):
        raise FitError(f"expected an (N, {len(TERMS)}) term matrix, got {arr.shape}")
    ranges = {}
    for k, term in enumerate(TERMS):
        col = arr[:, k]
        if robust:
            lo, hi = np.percentile(col, [1.0, 99.0])
        else:
            lo, hi = col.min(), col.max()
        if not hi > lo:
            raise FitError(f"degenerate raw-score range for term {term!r}: [{lo}, {hi}]")
        ranges[term] = (float(lo), float(hi))
    return CalibrationTable(ranges=ranges)


def normalize_matrix(raw: np.ndarray, cal: CalibrationTable) -> np.ndarray:
    out = np.empty_like(raw, dtype=float)
    for k, term in enumerate(TERMS):
        lo, hi = cal.ranges[term]
        t = np.clip((raw[:, k] - lo) / (hi - lo), 0.0, 1.0)
        out[:, k] = 100.0 - 40.0 * t
    return out


def hinge_boundary(features: np.ndarray, y: np.ndarray, params: SvmTrainParams
                   ) -> tuple[np.ndarray, float, list[float]]:
    """Soft-margin linear boundary by full-batch subgradient descent.

    Deterministic: zero init, step 1/(reg * t), running iterate average,
    and the best averaged iterate (lowest objective actually evaluated)
    is kept, so the returned trace is non-increasing by construction.
    Returns (weights, bias, objective trace) in the raw feature space.
    """
    X = (np.asarray(features, dtype=float) - _FEAT_CENTER) / _FEAT_SCALE
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if set(np.unique(y)) == {1.0} or set(np.unique(y)) == {-1.0}:
        side = 1.0 if y[0] > 0 else -1.0
        warnings.warn("single-class boundary; degenerating to a constant side", stacklevel=2)
        return np.zeros(d), side, [0.0]
    reg = params.regularization

    def objective(w, b):
        margins = y * (X @ w + b)
        return 0.5 * reg * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())

    w = np.zeros(d)
    b = 0.0
    w_sum = np.zeros(d)
    b_sum = 0.0
    best_obj = math.inf
    best_w = w.copy()
    best_b = b
    trace: list[float] = []
    check_every = 10
    for t in range(1, params.iterations + 1):
        margins = y * (X @ w + b)
        viol = margins < 1.0
        grad_w = reg * w - (y[viol] @ X[viol]) / n
        grad_b = -float(y[viol].sum()) / n
        eta = 1.0 / (reg * t)
        w = w - eta * grad_w
        b = b - eta * grad_b
        w_sum += w
        b_sum += b
        if t % check_every == 0 or t == params.iterations:
            w_avg = w_sum / t
            b_avg = b_sum / t
            obj = objective(w_avg, b_avg)
            if obj < best_obj:
                best_obj = obj
                best_w = w_avg.copy()
                best_b = b_avg
            trace.append(best_obj)

    w_raw = best_w / _FEAT_SCALE
    b_raw = best_b - float(best_w.sum()) * (_FEAT_CENTER / _FEAT_SCALE)
    return w_raw, float(b_raw), trace


def train_svm(features: np.ndarray, labels: Sequence[Level],
              params: SvmTrainParams | None = None) -> LinearSvmModel:
    """Two ordinal boundaries (low | mid+high and low+mid | high)."""
    if params is None:
        params = SvmTrainParams()
    features = np.asarray(features, dtype=float)
    ranks = np.array([lv.rank for lv in labels])
    if len(set(ranks.tolist())) < 2:
        raise FitError("need at least two distinct labels to train the classifier")
    boundaries = []
    for cut in (0, 1):  # above low, above mid
        y = np.where(ranks > cut, 1.0, -1.0)
        w, b, _ = hinge_boundary(features, y, params)
        boundaries.append(SvmBoundary(weights=tuple(float(x) for x in w), bias=b))
    return LinearSvmModel(low_mid=boundaries[0], mid_high=boundaries[1])


def ordinal_violations(model: LinearSvmModel, features: np.ndarray) -> int:
    """Cases the two boundaries disagree on (called high but not above low)."""
    X = np.asarray(features, dtype=float)
    f_lm = X @ np.asarray(model.low_mid.weights) + model.low_mid.bias
    f_mh = X @ np.asarray(model.mid_high.weights) + model.mid_high.bias
    return int(((f_mh > 0) & ~(f_lm > 0)).sum())


def fit_weights(features: np.ndarray, targets: np.ndarray, levels: Sequence[Level],
                min_segment_cases: int = MIN_SEGMENT_CASES) -> SegmentWeights:
    """Joint MAE fit of the three weight rows and the shared offset.

    Formulated as one linear program: split residuals r_i = u_i - v_i
    with u, v >= 0, objective mean(u + v), per-segment non-negative
    weight blocks, one free offset shared by all segments.
    """
    X = np.asarray(features, dtype=float)
    yv = np.asarray(targets, dtype=float)
    ranks = np.array([lv.rank for lv in levels])
    n, d = X.shape
    if n != len(yv) or n != len(ranks):
        raise FitError("features, targets and levels must have equal length")
    for level in LEVELS:
        count = int((ranks == level.rank).sum())
        if count < min_segment_cases:
            raise FitError(
                f"segment {level.value!r} has only {count} cases; need >= {min_segment_cases}"
            )

    n_w = 3 * d
    n_var = n_w + 1 + 2 * n  # weights, offset, u, v
    cost = np.zeros(n_var)
    cost[n_w + 1 : n_w + 1 + n] = 1.0 / n
    cost[n_w + 1 + n :] = 1.0 / n

    rows, cols, data = [], [], []
    for i in range(n):
        base = ranks[i] * d
        for k in range(d):
            rows.append(i)
            cols.append(base + k)
            data.append(X[i, k])
        rows.append(i)
        cols.append(n_w)
        data.append(1.0)
        rows.append(i)
        cols.append(n_w + 1 + i)
        data.append(1.0)
        rows.append(i)
        cols.append(n_w + 1 + n + i)
        data.append(-1.0)
    a_eq = sparse.csr_matrix((data, (rows, cols)), shape=(n, n_var))

    bounds = [(0.0, None)] * n_w + [(None, None)] + [(0.0, None)] * (2 * n)
    res = linprog(cost, A_eq=a_eq, b_eq=yv, bounds=bounds, method="highs")
    if res.status != 0:
        raise FitError(f"weight fit LP failed: {res.message}")
    w = np.maximum(res.x[:n_w], 0.0)  # clip solver noise at the bound
    offset = float(res.x[n_w])
    rows_by_level = {
        level.value: {term: float(w[level.rank * d + k]) for k, term in enumerate(TERMS)}
        for level in LEVELS
    }
    return SegmentWeights(
        low=rows_by_level["low"], mid=rows_by_level["mid"], high=rows_by_level["high"],
        offset=offset,
    )


def predict_with(weights: SegmentWeights, svm: LinearSvmModel,
                 features: np.ndarray, crashes: Sequence[bool]) -> np.ndarray:
    """Deployment-path predictions: classify, integrate, crash veto."""
    X = np.asarray(features, dtype=float)
    out = np.empty(len(X))
    for i, (x, crash) in enumerate(zip(X, crashes)):
        if crash:
            out[i] = 0.0
            continue
        level = svm.classify(x)
        out[i] = float(weights.row(level) @ x + weights.offset)
    return out


def weights_mae(weights: SegmentWeights, features: np.ndarray, targets: np.ndarray,
                levels: Sequence[Level]) -> float:
    """Training-objective MAE: weight rows picked by the given labels."""
    X = np.asarray(features, dtype=float)
    preds = np.array(
        [float(weights.row(lv) @ x + weights.offset) for x, lv in zip(X, levels)]
    )
    return float(np.abs(preds - np.asarray(targets, dtype=float)).mean())


@dataclass(frozen=True)
class FittedModel:
    retained_raters: Optional[tuple[int, ...]]
    calibration: CalibrationTable
    svm: LinearSvmModel
    weights: SegmentWeights
    ground_truths: tuple[GroundTruth, ...]
    features: np.ndarray
    train_mae: float


def _select_ratings(case: RatedCase, retained: Optional[Sequence[int]]) -> tuple[float, ...]:
    if retained is None:
        return case.ratings
    return tuple(case.ratings[i] for i in retained)


def fit_dataset(cases: Sequence[RatedCase],
                thresholds: tuple[float, float] = DEFAULT_SEGMENT_THRESHOLDS,
                robust: bool = False,
                svm_params: SvmTrainParams | None = None) -> FittedModel:
    """Full fit on one dataset: filtering, ground truth, calibration, SVM, weights."""
    if len(cases) < 3 * MIN_SEGMENT_CASES:
        raise FitError(f"dataset too small to fit: {len(cases)} cases")
    lengths = {len(c.ratings) for c in cases}
    if len(lengths) == 1 and lengths != {0}:
        matrix = np.array([c.ratings for c in cases], dtype=float).T  # raters x cases
        retained_opt: Optional[tuple[int, ...]] = tuple(filter_raters(matrix))
    else:
        warnings.warn("ragged rating lists; rater filtering skipped", stacklevel=2)
        retained_opt = None

    gts = tuple(
        ground_truth(_select_ratings(c, retained_opt), thresholds) for c in cases
    )
    raw = np.array([c.terms for c in cases], dtype=float)
    calibration = calibrate_normalization(raw, robust=robust)
    feats = normalize_matrix(raw, calibration)
    svm = train_svm(feats, [gt.level for gt in gts], svm_params)

    non_crash = np.array([not c.crash for c in cases])
    if non_crash.sum() < 3 * MIN_SEGMENT_CASES:
        raise FitError("too few non-crash cases to fit the integrator weights")
    levels_nc = [gt.level for gt, keep in zip(gts, non_crash) if keep]
    weights = fit_weights(
        feats[non_crash],
        np.array([gt.score for gt in gts])[non_crash],
        levels_nc,
    )
    preds = predict_with(weights, svm, feats, [c.crash for c in cases])
    train_mae = float(np.abs(preds - np.array([gt.score for gt in gts])).mean())
    return FittedModel(
        retained_raters=retained_opt,
        calibration=calibration,
        svm=svm,
        weights=weights,
        ground_truths=gts,
        features=feats,
        train_mae=train_mae,
    )


def cross_validate(cases: Sequence[RatedCase],
                   cv: CvParams | None = None,
                   seed: int = 0,
                   thresholds: tuple[float, float] = DEFAULT_SEGMENT_THRESHOLDS,
                   robust: bool = False,
                   svm_params: SvmTrainParams | None = None) -> tuple[FitResult, FittedModel]:
    """Repeated holdout validation plus a final full-data fit.

    Each repeat reshuffles with the master seed, fits everything on the
    train split only (rater filtering included), then scores the held-out
    cases through the deployment path. The returned weights come from the
    full-data fit; the validation MAE is the mean over repeats.
    """
    if cv is None:
        cv = CvParams()
    cases = list(cases)
    n = len(cases)
    rng = np.random.default_rng(seed)
    repeat_maes = []
    for _ in range(cv.repeats):
        perm = rng.permutation(n)
        n_train = int(round(cv.train_fraction * n))
        n_train = min(max(n_train, 1), n - 1)
        train = [cases[i] for i in perm[:n_train]]
        val = [cases[i] for i in perm[n_train:]]
        fitted = fit_dataset(train, thresholds, robust, svm_params)
        val_raw = np.array([c.terms for c in val], dtype=float)
        val_feats = normalize_matrix(val_raw, fitted.calibration)
        val_gts = [ground_truth(_select_ratings(c, fitted.retained_raters), thresholds) for c in val]
        preds = predict_with(fitted.weights, fitted.svm, val_feats, [c.crash for c in val])
        mae = float(np.abs(preds - np.array([g.score for g in val_gts])).mean())
        repeat_maes.append(mae)

    full = fit_dataset(cases, thresholds, robust, svm_params)
    result = FitResult(
        weights=full.weights,
        train_mae=full.train_mae,
        val_mae=float(np.mean(repeat_maes)),
        repeat_maes=tuple(repeat_maes),
    )
    return result, full


# -- rated dataset I/O ----------------------------------------------------


def load_rated_dataset(source: Union[str, Path]) -> list[RatedCase]:
    """Read a rated dataset: header line, then one case record per line."""
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, (str, Path)) else source
    cases = []
    saw_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise FitError(f"rated dataset line {lineno}: invalid JSON ({e.msg})") from None
        if not saw_header:
            if rec.get("schema") != RATED_SCHEMA:
                raise FitError(
                    f"rated dataset line {lineno}: expected schema {RATED_SCHEMA!r}"
                )
            saw_header = True
            continue
        try:
            cases.append(
                RatedCase(
                    case_id=str(rec["case"]),
                    terms=tuple(float(rec["terms"][t]) for t in TERMS),
                    ratings=tuple(float(r) for r in rec["ratings"]),
                    crash=bool(rec.get("crash", False)),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FitError(f"rated dataset line {lineno}: bad record ({e})") from None
    if not saw_header:
        raise FitError("rated dataset missing header record")
    return cases


def save_rated_dataset(cases: Sequence[RatedCase], path: Union[str, Path]) -> None:
    lines = [json.dumps({"schema": RATED_SCHEMA})]
    for c in cases:
        lines.append(
            json.dumps(
                {
                    "case": c.case_id,
                    "terms": {t: c.terms[k] for k, t in enumerate(TERMS)},
                    "ratings": list(c.ratings),
                    "crash": c.crash,
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
