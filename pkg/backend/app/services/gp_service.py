"""Exact Gaussian-process regression: RBF kernel, zero prior mean, homoscedastic noise."""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from app.config import get_settings
from app.errors import DataError, FactorizationError
from app.models.domain import Dataset
from app.models.schemas import GPHyper
from app.utils import check_deadline

log = logging.getLogger(__name__)

# Relative to the signal variance
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
# Box for the log-space optimizer
LOG_BOUNDS = {
    "lengthscale": (math.log(1e-3), math.log(1e3)),
    "signal_variance": (math.log(1e-4), math.log(1e4)),
    "noise_variance": (math.log(1e-6), math.log(1e2)),
}
_HYPER_ORDER = ("lengthscale", "signal_variance", "noise_variance")


@dataclass(frozen=True)
class GPModel:
    hyper: GPHyper
    train_features: np.ndarray
    train_targets: np.ndarray
    chol: tuple  # cho_factor output for K + (noise + jitter) I
    weights: np.ndarray  # (K + noise I)^-1 y
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return int(self.train_targets.shape[0])


def rbf(x1: np.ndarray, x2: np.ndarray, hyper: GPHyper) -> float:
    x1, x2 = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ValueError(f"rbf needs equal lengths, got {x1.shape} and {x2.shape}")
    sq = float(np.sum((x1 - x2) ** 2))
    return hyper.signal_variance * math.exp(-sq / (2.0 * hyper.lengthscale**2))


def kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: GPHyper) -> np.ndarray:
    sq = cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")
    return hyper.signal_variance * np.exp(-sq / (2.0 * hyper.lengthscale**2))


def _factorize(x: np.ndarray, y: np.ndarray, hyper: GPHyper) -> GPModel:
    k = kernel_matrix(x, x, hyper)
    n = x.shape[0]
    for rel in JITTER_LADDER:
        jitter = rel * hyper.signal_variance
        try:
            chol = cho_factor(k + (hyper.noise_variance + jitter) * np.eye(n), lower=True)
        except LinAlgError:
            continue
        if rel > 0:
            log.warning("GP factorization needed jitter %.1e * signal variance", rel)
        return GPModel(
            hyper=hyper,
            train_features=x,
            train_targets=y,
            chol=chol,
            weights=cho_solve(chol, y),
            jitter=jitter,
        )
    raise FactorizationError(
        f"Kernel matrix not positive definite even with jitter {JITTER_LADDER[-1]:.0e} * s^2 (n={n}, hyper={hyper})"
    )


def condition(ds: Dataset, hyper: GPHyper) -> GPModel:
    """Condition on data with fixed hyperparameters."""
    return _factorize(ds.features, ds.targets, hyper)


def log_marginal_likelihood(gp: GPModel) -> float:
    """-1/2 y^T K^-1 y - 1/2 log det K - n/2 log 2 pi, with K = kernel + noise I."""
    lower = gp.chol[0]
    half_logdet = float(np.sum(np.log(np.diag(lower))))
    return -0.5 * float(gp.train_targets @ gp.weights) - half_logdet - 0.5 * gp.n * math.log(2.0 * math.pi)


def _lml_gradient(gp: GPModel) -> np.ndarray:
    """d LML / d (log l, log s^2, log noise)."""
    x, hyper = gp.train_features, gp.hyper
    sq = cdist(x, x, "sqeuclidean")
    k_f = hyper.signal_variance * np.exp(-sq / (2.0 * hyper.lengthscale**2))
    k_inv = cho_solve(gp.chol, np.eye(gp.n))
    inner = np.outer(gp.weights, gp.weights) - k_inv
    d_log_l = k_f * sq / hyper.lengthscale**2
    return 0.5 * np.array([
        np.sum(inner * d_log_l),
        np.sum(inner * k_f),
        hyper.noise_variance * np.trace(inner),
    ])


def _to_log(hyper: GPHyper) -> np.ndarray:
    return np.log([getattr(hyper, name) for name in _HYPER_ORDER])


def _from_log(theta: np.ndarray) -> GPHyper:
    clipped = [float(np.clip(t, *LOG_BOUNDS[name])) for t, name in zip(theta, _HYPER_ORDER)]
    return GPHyper(**{name: math.exp(t) for name, t in zip(_HYPER_ORDER, clipped)})


def fit_gp(
    ds: Dataset,
    init: GPHyper,
    iters: int = 50,
    *,
    step: float = 0.1,
    max_halvings: int = 20,
    max_n: Optional[int] = None,
    deadline: Optional[float] = None,
) -> GPModel:
    """Gradient ascent on the log marginal likelihood in log-hyperparameter space.

    A step is only taken if it does not decrease the likelihood (backtracking
    by halving), so the returned model is never worse than ``init``. The
    ``deadline`` (time.monotonic()) is checked before every iteration.
    """
    max_n = max_n if max_n is not None else get_settings().gp_max_n
    if ds.n < 2:
        raise DataError(f"GP needs at least 2 training rows, got {ds.n}")
    if ds.n > max_n:
        raise DataError(f"Exact GP limited to n <= {max_n} (O(n^3) cost), got n={ds.n}")
    if iters < 0:
        raise ValueError(f"iters must be non-negative, got {iters}")

    gp = condition(ds, init)
    best = log_marginal_likelihood(gp)
    start = best
    theta = _to_log(init)
    for it in range(iters):
        check_deadline(deadline, f"GP fit (iteration {it})")
        grad = _lml_gradient(gp)
        if not np.all(np.isfinite(grad)):
            log.warning("Non-finite LML gradient at iteration %d; stopping", it)
            break
        direction = grad / max(1.0, float(np.linalg.norm(grad)))
        accepted = False
        for _ in range(max_halvings):
            trial_theta = theta + step * direction
            try:
                trial = condition(ds, _from_log(trial_theta))
            except FactorizationError:
                step *= 0.5
                continue
            value = log_marginal_likelihood(trial)
            if np.isfinite(value) and value >= best:
                gp, best, theta, accepted = trial, value, _to_log(trial.hyper), True
                step *= 1.5
                break
            step *= 0.5
        if not accepted:
            log.debug("GP line search stalled at iteration %d", it)
            break
    log.debug("GP fit: lml %.4f -> %.4f, hyper=%s", start, best, gp.hyper)
    return gp


def posterior_batch(gp: GPModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and variance (latent variance + observation noise) for m rows."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != gp.train_features.shape[1]:
        raise ValueError(f"Expected {gp.train_features.shape[1]} features, got {x.shape[1]}")
    k_star = kernel_matrix(gp.train_features, x, gp.hyper)
    mean = k_star.T @ gp.weights
    v = cho_solve(gp.chol, k_star)
    latent = gp.hyper.signal_variance - np.sum(k_star * v, axis=0)
    variance = np.maximum(latent, 0.0) + gp.hyper.noise_variance
    return mean, variance


def posterior(gp: GPModel, x_star: np.ndarray) -> tuple[float, float]:
    mean, variance = posterior_batch(gp, np.asarray(x_star, dtype=np.float64).reshape(1, -1))
    return float(mean[0]), float(variance[0])
