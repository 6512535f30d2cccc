"""Dataset ingestion, standardization, seeded splitting and synthetic generators."""

import logging
import math
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from scipy import stats

from app.errors import DataError
from app.models.domain import Dataset, ScalerParams, SplitTriple
from app.models.schemas import DataSource, SyntheticKind, SyntheticSpec
from app.utils import make_rng

log = logging.getLogger(__name__)

# floor(n * frac) is taken after adding this, so 0.29 * 100 counts as 29
_FRACTION_EPS = 1e-9


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def load_csv(path: Union[str, Path], target_column: Union[str, int]) -> Dataset:
    """Read a numeric CSV with one header row.

    ``target_column`` is a header name or a column position (negative counts
    from the end). Error rows are reported as file line numbers, header = 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"CSV file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"CSV file is empty: {path}") from exc
    columns = [str(c) for c in frame.columns]
    if not columns:
        raise DataError(f"CSV file has no header: {path}")

    if isinstance(target_column, str):
        if target_column not in columns:
            raise DataError(f"Target column {target_column!r} not in header {columns}", column=target_column)
        target_pos = columns.index(target_column)
    else:
        if not -len(columns) <= target_column < len(columns):
            raise DataError(f"Target column index {target_column} out of range for {len(columns)} columns")
        target_pos = target_column % len(columns)

    values = np.empty(frame.shape, dtype=np.float64)
    for j, name in enumerate(columns):
        parsed = pd.to_numeric(frame.iloc[:, j], errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            i = int(bad[0])
            raise DataError(
                f"Non-numeric cell {frame.iloc[i, j]!r} at row {i + 2}, column {name!r} in {path}",
                row=i + 2,
                column=name,
            )
        values[:, j] = parsed

    if values.shape[0] == 0:
        raise DataError(f"CSV file has a header but no data rows: {path}")

    feature_pos = [j for j in range(len(columns)) if j != target_pos]
    ds = Dataset(
        features=values[:, feature_pos],
        targets=values[:, target_pos],
        column_names=tuple(columns[j] for j in feature_pos),
        target_name=columns[target_pos],
    )
    log.debug("Loaded %s: n=%d d=%d target=%s", path, ds.n, ds.d, ds.target_name)
    return ds


def write_csv(ds: Dataset, path: Union[str, Path]) -> Path:
    """Write features then target, header included; full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(ds.features, columns=list(ds.column_names))
    frame[ds.target_name] = ds.targets
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def fit_scaler(ds: Dataset) -> ScalerParams:
    """Population mean/std per column; zero-spread columns get std 1."""
    table = np.column_stack([ds.features, ds.targets])
    means = table.mean(axis=0)
    stds = table.std(axis=0)
    flat = np.ptp(table, axis=0) == 0
    stds[flat] = 1.0
    return ScalerParams(means=means, stds=stds)


def apply_scaler(ds: Dataset, params: ScalerParams) -> Dataset:
    if params.means.shape[0] != ds.d + 1:
        raise DataError(f"Scaler fitted on {params.means.shape[0] - 1} features, dataset has {ds.d}")
    x = (ds.features - params.means[:-1]) / params.stds[:-1]
    y = (ds.targets - params.means[-1]) / params.stds[-1]
    return ds.with_values(x, y)


def invert_scaler(ds: Dataset, params: ScalerParams) -> Dataset:
    if params.means.shape[0] != ds.d + 1:
        raise DataError(f"Scaler fitted on {params.means.shape[0] - 1} features, dataset has {ds.d}")
    x = ds.features * params.stds[:-1] + params.means[:-1]
    y = ds.targets * params.stds[-1] + params.means[-1]
    return ds.with_values(x, y)


def invert_targets(values: np.ndarray, params: ScalerParams) -> np.ndarray:
    """Map standardized target values (or interval endpoints) back to original units."""
    return np.asarray(values, dtype=np.float64) * params.target_std + params.target_mean


def standardize(ds: Dataset) -> tuple[Dataset, ScalerParams]:
    params = fit_scaler(ds)
    return apply_scaler(ds, params), params


# ---------------------------------------------------------------------------
# Skew helpers (opt-in; never applied automatically)
# ---------------------------------------------------------------------------

def log_transform_targets(ds: Dataset) -> Dataset:
    """y -> log(y - min(y) + 1), keeping every target finite."""
    shifted = ds.targets - ds.targets.min() + 1.0
    return ds.with_values(ds.features, np.log(shifted))


def sample_skewness(values: np.ndarray) -> float:
    return float(stats.skew(np.asarray(values, dtype=np.float64)))


def sample_kurtosis(values: np.ndarray) -> float:
    """Pearson (non-excess) kurtosis."""
    return float(stats.kurtosis(np.asarray(values, dtype=np.float64), fisher=False))


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split_indices(n: int, seed: int, test_frac: float, cal_frac: float) -> SplitTriple:
    if n < 1:
        raise DataError("Cannot split an empty dataset")
    if not 0 < test_frac < 1:
        raise DataError(f"test_frac must lie in (0, 1), got {test_frac}")
    if not 0 <= cal_frac < 1:
        raise DataError(f"cal_frac must lie in [0, 1), got {cal_frac}")

    n_test = math.floor(n * test_frac + _FRACTION_EPS)
    n_cal = math.floor((n - n_test) * cal_frac + _FRACTION_EPS)
    n_train = n - n_test - n_cal
    if n_test == 0:
        raise DataError(f"test_frac={test_frac} leaves an empty test set for n={n}")
    if cal_frac > 0 and n_cal == 0:
        raise DataError(f"cal_frac={cal_frac} leaves an empty calibration set for n={n}")
    if n_train == 0:
        raise DataError(f"Fractions (test={test_frac}, cal={cal_frac}) leave an empty training set for n={n}")

    # Generator.permutation is a Fisher-Yates shuffle driven by the Philox stream
    order = make_rng(seed).permutation(n)
    return SplitTriple(
        train_idx=order[n_test + n_cal:],
        cal_idx=order[n_test:n_test + n_cal],
        test_idx=order[:n_test],
        seed=seed,
    )


def split(ds: Dataset, seed: int, test_frac: float, cal_frac: float) -> SplitTriple:
    return split_indices(ds.n, seed, test_frac, cal_frac)


def holdout_slice(n: int, seed: int, frac: float) -> tuple[np.ndarray, np.ndarray]:
    """Split range(n) into (rest, holdout) with floor(n*frac) holdout rows (at least 1 when frac > 0)."""
    n_hold = math.floor(n * frac + _FRACTION_EPS)
    if frac > 0:
        n_hold = max(1, n_hold)
    n_hold = min(n_hold, n - 1)
    order = make_rng(seed).permutation(n)
    return order[n_hold:], order[:n_hold]


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def gen_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    rng = make_rng(seed)
    beta = rng.normal(size=spec.d)
    x = rng.uniform(-1.0, 1.0, size=(spec.n, spec.d))
    eps = rng.normal(size=spec.n)
    s = spec.noise_scale

    if spec.kind == SyntheticKind.LINEAR_HOMOSCEDASTIC:
        y = x @ beta + s * eps
    elif spec.kind == SyntheticKind.SINE_HETEROSCEDASTIC:
        x1 = x[:, 0]
        y = np.sin(2.0 * np.pi * x1) + s * (1.0 + np.abs(x1)) * eps
    elif spec.kind == SyntheticKind.LOGNORMAL_SKEWED:
        # exp(eps) with eps ~ N(0, s^2) has mean exp(s^2 / 2)
        y = x @ beta + np.exp(s * eps) - np.exp(0.5 * s * s)
    else:
        raise DataError(f"Unknown synthetic kind {spec.kind}")

    return Dataset(
        features=x,
        targets=y,
        column_names=tuple(f"x{j}" for j in range(spec.d)),
        target_name="y",
    )


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def concat(first: Dataset, second: Dataset) -> Dataset:
    """Stack two datasets with the same columns, keeping their row ids."""
    if first.column_names != second.column_names:
        raise DataError(f"Column mismatch: {first.column_names} vs {second.column_names}")
    return Dataset(
        features=np.vstack([first.features, second.features]),
        targets=np.concatenate([first.targets, second.targets]),
        column_names=first.column_names,
        target_name=first.target_name,
        row_ids=np.concatenate([first.row_ids, second.row_ids]),
    )


def load_dataset(source: DataSource) -> Dataset:
    """Resolve an experiment's data source to a Dataset."""
    if source.csv_path is not None:
        ds = load_csv(source.csv_path, source.target_column)
    else:
        ds = gen_synthetic(source.synthetic, source.synthetic_seed)
    if source.log_target:
        log.info("Log-transforming target %s (skewness %.3f)", ds.target_name, sample_skewness(ds.targets))
        ds = log_transform_targets(ds)
    return ds
