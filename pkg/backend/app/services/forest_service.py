"""
Bagged regression forest with recorded bootstrap membership.

Each tree is a scikit-learn ``DecisionTreeRegressor`` fitted on a bootstrap
sample (greedy variance-reduction splits, midpoint thresholds, mean leaves).
On top of the trees the forest keeps

  inbag       (n_trees, n_train) bootstrap counts, for out-of-bag predictions
  train_leaf  (n_trees, n_train) leaf of every training row, for quantile
              regression forest weights (each training index counted once)
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from app.errors import DataError, EmptySubensembleError
from app.models.domain import Dataset
from app.models.schemas import ForestConfig
from app.utils import child_seeds, make_rng

log = logging.getLogger(__name__)


class _StumpTree:
    """max_depth = 0: a single leaf predicting the in-bag mean."""

    def __init__(self, value: float):
        self.value = value

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.full(x.shape[0], self.value)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[0], dtype=np.int64)


@dataclass(frozen=True)
class Oob:
    """Prediction mode: average only the trees whose bootstrap sample excludes ``index``."""

    index: int


PredictMode = Union[str, Oob]


@dataclass(frozen=True)
class Forest:
    trees: tuple
    inbag: np.ndarray
    train_leaf: np.ndarray
    train_targets: np.ndarray
    n_train: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def oob_mask(self) -> np.ndarray:
        """(n_trees, n_train): True where the tree never saw the training row."""
        return self.inbag == 0

    def leaf_members(self, tree: int) -> dict[int, np.ndarray]:
        leaves = self.train_leaf[tree]
        return {int(leaf): np.flatnonzero(leaves == leaf) for leaf in np.unique(leaves)}


def _fit_tree(x: np.ndarray, y: np.ndarray, cfg: ForestConfig, seed: int):
    rng = make_rng(seed)
    n = x.shape[0]
    sample = rng.integers(0, n, size=n)
    counts = np.bincount(sample, minlength=n)
    if cfg.max_depth == 0:
        tree = _StumpTree(float(np.mean(y[sample])))
    else:
        tree = DecisionTreeRegressor(
            max_depth=cfg.max_depth,
            min_samples_leaf=cfg.min_leaf,
            max_features=cfg.features_per_split,
            random_state=int(rng.integers(0, 2**31 - 1)),
        )
        tree.fit(x[sample], y[sample])
    return tree, counts, tree.apply(x)


def fit_forest(ds: Dataset, cfg: ForestConfig) -> Forest:
    if ds.n < 2:
        raise DataError(f"Forest needs at least 2 training rows, got {ds.n}")
    if cfg.features_per_split is not None and cfg.features_per_split > ds.d:
        raise ValueError(f"features_per_split={cfg.features_per_split} exceeds d={ds.d}")
    seeds = child_seeds(cfg.seed, cfg.n_trees)
    x, y = ds.features, ds.targets

    if cfg.max_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            fitted = list(pool.map(lambda s: _fit_tree(x, y, cfg, s), seeds))
    else:
        fitted = [_fit_tree(x, y, cfg, s) for s in seeds]

    trees = tuple(t for t, _, _ in fitted)
    inbag = np.vstack([c for _, c, _ in fitted])
    train_leaf = np.vstack([leaf for _, _, leaf in fitted]).astype(np.int64)
    for arr in (inbag, train_leaf):
        arr.setflags(write=False)
    targets = np.array(y)
    targets.setflags(write=False)
    log.debug("Fitted forest: %d trees on n=%d d=%d", len(trees), ds.n, ds.d)
    return Forest(trees=trees, inbag=inbag, train_leaf=train_leaf, train_targets=targets, n_train=ds.n)


# ---------------------------------------------------------------------------
# Point predictions
# ---------------------------------------------------------------------------

def tree_predictions(forest: Forest, x: np.ndarray) -> np.ndarray:
    """(n_trees, m) per-tree predictions for m rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.vstack([tree.predict(x) for tree in forest.trees])


def predict_batch(forest: Forest, x: np.ndarray) -> np.ndarray:
    return tree_predictions(forest, x).mean(axis=0)


def predict(forest: Forest, x: np.ndarray, mode: PredictMode = "full") -> float:
    preds = tree_predictions(forest, np.asarray(x, dtype=np.float64).reshape(1, -1))[:, 0]
    if mode == "full":
        return float(preds.mean())
    if isinstance(mode, Oob):
        if not 0 <= mode.index < forest.n_train:
            raise ValueError(f"OOB index {mode.index} outside 0..{forest.n_train - 1}")
        keep = forest.inbag[:, mode.index] == 0
        if not keep.any():
            raise EmptySubensembleError(mode.index)
        return float(preds[keep].mean())
    raise ValueError(f"Unknown prediction mode {mode!r}")


def oob_predictions(forest: Forest, train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """OOB prediction for every training row and the mask of rows that have one."""
    if train.n != forest.n_train:
        raise ValueError(f"Forest was fitted on {forest.n_train} rows, got {train.n}")
    preds = tree_predictions(forest, train.features)
    mask = forest.oob_mask()
    counts = mask.sum(axis=0)
    valid = counts > 0
    sums = np.where(mask, preds, 0.0).sum(axis=0)
    out = np.full(train.n, np.nan)
    out[valid] = sums[valid] / counts[valid]
    return out, valid


def oob_residuals(forest: Forest, train: Dataset) -> np.ndarray:
    """Signed errors y_i - yhat_(i)(x_i); rows without OOB trees are skipped."""
    preds, valid = oob_predictions(forest, train)
    skipped = int((~valid).sum())
    if skipped:
        log.debug("Skipped %d training rows with empty OOB subensembles", skipped)
    return train.targets[valid] - preds[valid]


# ---------------------------------------------------------------------------
# Quantile regression forest
# ---------------------------------------------------------------------------

def qrf_weights(forest: Forest, x: np.ndarray) -> np.ndarray:
    """(m, n_train) weights w_i(x): per tree 1/leaf size for rows sharing x's leaf, averaged."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    weights = np.zeros((x.shape[0], forest.n_train))
    for t, tree in enumerate(forest.trees):
        query_leaf = tree.apply(x)
        train_leaf = forest.train_leaf[t]
        leaf_ids, sizes = np.unique(train_leaf, return_counts=True)
        size_of = dict(zip(leaf_ids.tolist(), sizes.tolist()))
        same = query_leaf[:, None] == train_leaf[None, :]
        inv = np.array([1.0 / size_of.get(int(leaf), 1) for leaf in query_leaf])
        weights += same * inv[:, None]
    return weights / forest.n_trees


def _weighted_cdf_table(forest: Forest, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted support (positive-weight targets) and the cumulative weights, last entry exactly 1."""
    keep = w > 0
    support = forest.train_targets[keep]
    order = np.argsort(support, kind="stable")
    support = support[order]
    cum = np.cumsum(w[keep][order])
    cum = np.minimum(cum / cum[-1], 1.0)
    return support, cum


def qrf_cdf(forest: Forest, x: np.ndarray, y: float) -> float:
    w = qrf_weights(forest, x)[0]
    support, cum = _weighted_cdf_table(forest, w)
    pos = int(np.searchsorted(support, y, side="right"))
    return 0.0 if pos == 0 else float(cum[pos - 1])


def _quantile_from_table(support: np.ndarray, cum: np.ndarray, beta: float) -> float:
    k = int(np.searchsorted(cum, beta, side="left"))
    return float(support[min(k, support.shape[0] - 1)])


def qrf_quantile(forest: Forest, x: np.ndarray, beta: float) -> float:
    """inf{y : F(y | x) >= beta} over the training targets."""
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    w = qrf_weights(forest, x)[0]
    support, cum = _weighted_cdf_table(forest, w)
    return _quantile_from_table(support, cum, beta)


def qrf_quantiles_batch(forest: Forest, x: np.ndarray, betas: tuple[float, ...]) -> np.ndarray:
    """(m, len(betas)) conditional quantiles."""
    for beta in betas:
        if not 0 < beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {beta}")
    weights = qrf_weights(forest, x)
    out = np.empty((weights.shape[0], len(betas)))
    for i, w in enumerate(weights):
        support, cum = _weighted_cdf_table(forest, w)
        out[i] = [_quantile_from_table(support, cum, b) for b in betas]
    return out


def oob_member_count(forest: Forest, index: Optional[int] = None) -> np.ndarray:
    """Number of OOB trees per training row (or for one row)."""
    counts = forest.oob_mask().sum(axis=0)
    return counts if index is None else counts[index]
