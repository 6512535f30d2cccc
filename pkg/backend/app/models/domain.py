"""
In-memory numeric containers shared across services.

These hold numpy arrays, so they are frozen dataclasses rather than pydantic
models; every array is made read-only at construction so a value can be shared
between concurrent readers.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from app.errors import DataError


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Design matrix X (n × d) and response y (n,).

    ``row_ids`` are the row positions in the source data set; subsets keep them
    so the benchmark can prove calibration rows never leak into training.
    """

    features: np.ndarray
    targets: np.ndarray
    column_names: tuple[str, ...] = ()
    target_name: str = "y"
    row_ids: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        x = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.targets, dtype=np.float64, copy=True).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DataError(f"Features must be a matrix, got {x.ndim} dimensions")
        if y.shape[0] < 1:
            raise DataError("Dataset needs at least one row")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"Feature rows ({x.shape[0]}) != target length ({y.shape[0]})")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise DataError("Dataset contains NaN or infinite entries")
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError(f"{len(names)} column names for {x.shape[1]} feature columns")
        ids = np.arange(y.shape[0]) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64).copy()
        if ids.shape != y.shape:
            raise DataError("row_ids must have one entry per row")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "targets", _frozen(y))
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "row_ids", _frozen(ids))

    @property
    def n(self) -> int:
        return int(self.targets.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            targets=self.targets[idx],
            column_names=self.column_names,
            target_name=self.target_name,
            row_ids=self.row_ids[idx],
        )

    def with_values(self, features: np.ndarray, targets: np.ndarray) -> "Dataset":
        """Same rows and names, new values (used by scaling transforms)."""
        return Dataset(
            features=features,
            targets=targets,
            column_names=self.column_names,
            target_name=self.target_name,
            row_ids=self.row_ids,
        )


@dataclass(frozen=True)
class ScalerParams:
    """Column means/stds; the last entry belongs to the target."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        means = np.array(self.means, dtype=np.float64, copy=True)
        stds = np.array(self.stds, dtype=np.float64, copy=True)
        if means.shape != stds.shape or means.ndim != 1 or means.shape[0] < 2:
            raise DataError("ScalerParams needs matching vectors of length d+1")
        if np.any(stds <= 0):
            raise DataError("ScalerParams stds must be strictly positive")
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "stds", _frozen(stds))

    @property
    def target_mean(self) -> float:
        return float(self.means[-1])

    @property
    def target_std(self) -> float:
        return float(self.stds[-1])


@dataclass(frozen=True)
class SplitTriple:
    train_idx: np.ndarray
    cal_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        for name in ("train_idx", "cal_idx", "test_idx"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64).copy()))

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_idx), len(self.cal_idx), len(self.test_idx)


@dataclass(frozen=True)
class Interval:
    """Closed interval [lower, upper]; either endpoint may be infinite."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        lo, hi = float(self.lower), float(self.upper)
        if np.isnan(lo) or np.isnan(hi):
            raise ValueError("Interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"Interval lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper


@dataclass(frozen=True)
class CalibrationRecord:
    """Sorted nonconformity scores of a calibration set and their critical value α*."""

    scores: np.ndarray
    critical: float
    alpha: float
    n_cal: int = field(default=0)

    def __post_init__(self) -> None:
        scores = np.sort(np.asarray(self.scores, dtype=np.float64))
        object.__setattr__(self, "scores", _frozen(scores))
        object.__setattr__(self, "critical", float(self.critical))
        object.__setattr__(self, "n_cal", int(scores.shape[0]))


BoundsFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
VectorFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class IntervalEstimator:
    """A fitted interval method: feature rows -> closed intervals at a fixed α.

    ``bounds`` maps an (m, d) matrix to (lower, upper) vectors; ``point`` is the
    point prediction when the method has one, ``spread`` the predictive standard
    deviation for the Gaussian families. All three are pure, so an estimator
    can be evaluated from several threads.
    """

    method: str
    alpha: float
    bounds: BoundsFn
    point: Optional[VectorFn] = None
    spread: Optional[VectorFn] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def has_point(self) -> bool:
        return self.point is not None

    def predict_intervals(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        lower, upper = self.bounds(x)
        lower = np.asarray(lower, dtype=np.float64).reshape(-1)
        upper = np.asarray(upper, dtype=np.float64).reshape(-1)
        if lower.shape != (x.shape[0],) or upper.shape != (x.shape[0],):
            raise ValueError(f"{self.method}: bounds returned {lower.shape}/{upper.shape} for {x.shape[0]} rows")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError(f"{self.method}: NaN interval endpoint")
        if np.any(lower > upper):
            raise ValueError(f"{self.method}: lower bound exceeds upper bound")
        return lower, upper

    def interval(self, x: np.ndarray) -> Interval:
        lower, upper = self.predict_intervals(np.asarray(x, dtype=np.float64).reshape(1, -1))
        return Interval(lower[0], upper[0])

    def predict_point(self, x: np.ndarray) -> np.ndarray:
        if self.point is None:
            raise ValueError(f"{self.method} has no point prediction")
        return np.asarray(self.point(np.atleast_2d(np.asarray(x, dtype=np.float64))), dtype=np.float64).reshape(-1)
