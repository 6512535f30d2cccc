"""
Inductive (split) conformal prediction.

A nonconformity measure scores calibration pairs, the critical value α* is a
finite-sample corrected empirical quantile of those scores, and each wrapper
turns α* into a closed-form interval around an already trained model. Nothing
here retrains a model.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from app.errors import CalibrationError
from app.models.domain import CalibrationRecord, Dataset, Interval, IntervalEstimator, VectorFn
from app.services import forest_service
from app.services.forest_service import Forest

log = logging.getLogger(__name__)


# ceil() of a product that should be an integer can land one rank too high
# after rounding (0.9 * 100 = 90.00000000000001)
_RANK_EPS = 1e-9


def order_statistic(scores: np.ndarray, k: int) -> float:
    """k-th smallest score (1-based); +inf when k > n, smallest when k <= 0."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.shape[0]
    if n == 0:
        raise CalibrationError("order_statistic needs at least one score")
    if k > n:
        return math.inf
    ordered = np.sort(scores)
    return float(ordered[max(k, 1) - 1])


def empirical_quantile(scores: np.ndarray, level: float) -> float:
    """k-th smallest score with k = ceil(level * n); +inf when k > n, smallest when k <= 0."""
    n = np.asarray(scores).size
    if n == 0:
        raise CalibrationError("empirical_quantile needs at least one score")
    return order_statistic(scores, math.ceil(level * n - _RANK_EPS))


def conformal_rank(alpha: float, n: int) -> int:
    """ceil((1-α)(n+1)), the rank of the ((1-α)(1+1/n))-quantile of n scores."""
    return math.ceil((1.0 - alpha) * (n + 1) - _RANK_EPS)


def conformal_quantile(scores: np.ndarray, alpha: float) -> float:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    return order_statistic(scores, conformal_rank(alpha, scores.shape[0]))


# ---------------------------------------------------------------------------
# Nonconformity measures
# ---------------------------------------------------------------------------

class MeasureTag(str, Enum):
    POINT = "point"
    NORMALIZED = "normalized"
    INTERVAL = "interval"
    OOB = "oob"


@dataclass(frozen=True)
class NonconformityMeasure:
    tag: MeasureTag
    point: Optional[VectorFn] = None
    dispersion: Optional[VectorFn] = None
    base: Optional[IntervalEstimator] = None
    train_row_ids: Optional[np.ndarray] = None  # rows the underlying model was fitted on

    def _dispersion(self, x: np.ndarray) -> np.ndarray:
        sigma = np.asarray(self.dispersion(x), dtype=np.float64).reshape(-1)
        bad = np.flatnonzero(~(sigma > 0))
        if bad.size:
            i = int(bad[0])
            raise CalibrationError(f"Dispersion must be positive, got {sigma[i]} at x={x[i].tolist()}")
        return sigma

    def scores(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """A(x_i, y_i) for every row."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if self.tag in (MeasureTag.POINT, MeasureTag.OOB):
            return np.abs(y - self.point(x))
        if self.tag == MeasureTag.NORMALIZED:
            return np.abs(y - self.point(x)) / self._dispersion(x)
        lower, upper = self.base.predict_intervals(x)
        return np.maximum(lower - y, y - upper)

    def region(self, x: np.ndarray, critical: float) -> tuple[np.ndarray, np.ndarray]:
        """Closed form of {y : A(x, y) <= critical}."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.tag in (MeasureTag.POINT, MeasureTag.OOB):
            center = self.point(x)
            return center - critical, center + critical
        if self.tag == MeasureTag.NORMALIZED:
            center, sigma = self.point(x), self._dispersion(x)
            return center - critical * sigma, center + critical * sigma
        lower, upper = self.base.predict_intervals(x)
        if critical < 0:
            # an inward shift can cross the endpoints; the region is then empty,
            # reported as the degenerate midpoint interval
            mid = 0.5 * (lower + upper)
            return np.minimum(lower - critical, mid), np.maximum(upper + critical, mid)
        return lower - critical, upper + critical


def point_measure(model: VectorFn, train_row_ids: Optional[np.ndarray] = None) -> NonconformityMeasure:
    return NonconformityMeasure(MeasureTag.POINT, point=model, train_row_ids=train_row_ids)


def normalized_measure(
    model: VectorFn, dispersion: VectorFn, train_row_ids: Optional[np.ndarray] = None
) -> NonconformityMeasure:
    return NonconformityMeasure(MeasureTag.NORMALIZED, point=model, dispersion=dispersion, train_row_ids=train_row_ids)


def interval_measure(est: IntervalEstimator, train_row_ids: Optional[np.ndarray] = None) -> NonconformityMeasure:
    return NonconformityMeasure(MeasureTag.INTERVAL, base=est, train_row_ids=train_row_ids)


def oob_measure(forest: Forest) -> NonconformityMeasure:
    """Test-time form |y - yhat(x)| with the full forest."""
    return NonconformityMeasure(MeasureTag.OOB, point=lambda x: forest_service.predict_batch(forest, x))


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def record_from_scores(scores: np.ndarray, alpha: float) -> CalibrationRecord:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] == 0:
        raise CalibrationError("Calibration set is empty")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not np.all(np.isfinite(scores)):
        raise CalibrationError("Non-finite nonconformity score in calibration set")
    n = scores.shape[0]
    critical = conformal_quantile(scores, alpha)
    if math.isinf(critical):
        log.warning("n_cal=%d is too small for alpha=%.3g; critical value is +inf", n, alpha)
    return CalibrationRecord(scores=scores, critical=critical, alpha=alpha)


def calibrate(
    measure: NonconformityMeasure,
    cal: Dataset,
    alpha: float,
    *,
    allow_overlap: bool = False,
) -> CalibrationRecord:
    """Score every calibration pair and take the ((1-α)(1+1/n))-quantile.

    Calibration rows must be disjoint from the rows the model was trained on;
    ``allow_overlap`` switches that check off for the unsafe benchmark mode.
    """
    if cal.n == 0:
        raise CalibrationError("Calibration set is empty")
    if measure.train_row_ids is not None:
        shared = np.intersect1d(measure.train_row_ids, cal.row_ids)
        if shared.size and not allow_overlap:
            raise CalibrationError(
                f"{shared.size} calibration rows were also used for training (first: {int(shared[0])})"
            )
        if shared.size:
            log.warning("Calibrating on %d training rows (unsafe mode)", shared.size)
    record = record_from_scores(measure.scores(cal.features, cal.targets), alpha)
    log.debug("Calibrated %s measure: n_cal=%d critical=%.4g", measure.tag.value, record.n_cal, record.critical)
    return record


def estimator_from_record(
    method: str, measure: NonconformityMeasure, record: CalibrationRecord
) -> IntervalEstimator:
    critical = record.critical
    spread = None
    if measure.tag == MeasureTag.NORMALIZED:
        spread = measure.dispersion
    elif measure.tag == MeasureTag.INTERVAL and measure.base is not None:
        spread = measure.base.spread
    point = measure.point if measure.point is not None else (measure.base.point if measure.base else None)
    return IntervalEstimator(
        method=method,
        alpha=record.alpha,
        bounds=lambda x: measure.region(x, critical),
        point=point,
        spread=spread,
    )


# ---------------------------------------------------------------------------
# Wrappers
# ---------------------------------------------------------------------------

def conformalize_point(
    model: VectorFn,
    cal: Dataset,
    alpha: float,
    *,
    train_row_ids: Optional[np.ndarray] = None,
    allow_overlap: bool = False,
) -> IntervalEstimator:
    measure = point_measure(model, train_row_ids)
    record = calibrate(measure, cal, alpha, allow_overlap=allow_overlap)
    return estimator_from_record("point_cp", measure, record)


def conformalize_normalized(
    model: VectorFn,
    dispersion: VectorFn,
    cal: Dataset,
    alpha: float,
    *,
    train_row_ids: Optional[np.ndarray] = None,
    allow_overlap: bool = False,
) -> IntervalEstimator:
    measure = normalized_measure(model, dispersion, train_row_ids)
    record = calibrate(measure, cal, alpha, allow_overlap=allow_overlap)
    return estimator_from_record("normalized_cp", measure, record)


def conformalize_interval(
    est: IntervalEstimator,
    cal: Dataset,
    alpha: float,
    *,
    train_row_ids: Optional[np.ndarray] = None,
    allow_overlap: bool = False,
) -> IntervalEstimator:
    """Shift both endpoints outward by α* (inward when α* < 0)."""
    measure = interval_measure(est, train_row_ids)
    record = calibrate(measure, cal, alpha, allow_overlap=allow_overlap)
    return estimator_from_record(f"{est.method}_cp", measure, record)


def oob_calibration(forest: Forest, train: Dataset, alpha: float) -> CalibrationRecord:
    """Calibrate on |OOB residuals| of the whole training set."""
    residuals = forest_service.oob_residuals(forest, train)
    if residuals.shape[0] == 0:
        raise CalibrationError("No training row has an out-of-bag subensemble")
    return record_from_scores(np.abs(residuals), alpha)


def conformalize_oob(forest: Forest, train: Dataset, alpha: float) -> IntervalEstimator:
    measure = oob_measure(forest)
    record = oob_calibration(forest, train, alpha)
    return estimator_from_record("oob_cp", measure, record)


def icp_region(
    measure: NonconformityMeasure,
    record: CalibrationRecord,
    x: np.ndarray,
    grid: np.ndarray,
) -> Optional[Interval]:
    """Hull of {y in grid : A(x, y) <= α*}; None when no grid point conforms."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    scores = measure.scores(np.repeat(x, grid.shape[0], axis=0), grid)
    kept = grid[scores <= record.critical]
    if kept.size == 0:
        return None
    return Interval(float(kept.min()), float(kept.max()))
