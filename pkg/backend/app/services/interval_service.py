"""
Non-conformal interval estimators.

Gaussian families (MC dropout, mean-variance networks, deep ensembles, GP)
report mean ± z·σ; direct families (quantile regression, QD, LUBE) read the
bounds off two network heads; forest families use OOB errors or QRF quantiles.
Every factory returns an immutable ``IntervalEstimator``.
"""
import logging
import math
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from app.errors import CalibrationError
from app.models.domain import Interval, IntervalEstimator
from app.services import forest_service, gp_service
from app.services.conformal_service import conformal_quantile, empirical_quantile
from app.services.forest_service import Forest
from app.services.gp_service import GPModel
from app.services.nn.network import NetParams, predict
from app.utils import child_seeds

log = logging.getLogger(__name__)


def z_score(alpha: float) -> float:
    """Two-tailed standard normal quantile Φ⁻¹(1 - α/2)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(ndtri(1.0 - alpha / 2.0))


def gaussian_bounds(mu: np.ndarray, sigma: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    half = z_score(alpha) * sigma
    return mu - half, mu + half


def gaussian_interval(mu: float, sigma: float, alpha: float) -> Interval:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    half = z_score(alpha) * sigma
    return Interval(mu - half, mu + half)


def _population_var(values: np.ndarray) -> np.ndarray:
    """Two-pass variance over axis 0, taken relative to the first member so equal members give exactly 0."""
    shifted = values - values[0]
    return np.var(shifted, axis=0)


def ensemble_moments(preds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std over axis 0 (R members)."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.shape[0] < 2:
        raise ValueError(f"ensemble_moments needs R >= 2 members, got {preds.shape[0]}")
    return preds.mean(axis=0), np.sqrt(_population_var(preds))


def mve_moments(means: np.ndarray, variances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Moment-matched mixture: σ² = var(μ_i) + mean(σ_i²)."""
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if means.shape != variances.shape:
        raise ValueError(f"means {means.shape} and variances {variances.shape} differ in shape")
    if means.shape[0] < 1:
        raise ValueError("mve_moments needs at least one component")
    if np.any(variances < 0):
        raise ValueError("variances must be non-negative")
    return means.mean(axis=0), np.sqrt(_population_var(means) + variances.mean(axis=0))


def _gaussian_estimator(method: str, alpha: float, moments) -> IntervalEstimator:
    return IntervalEstimator(
        method=method,
        alpha=alpha,
        bounds=lambda x: gaussian_bounds(*moments(x), alpha),
        point=lambda x: moments(x)[0],
        spread=lambda x: moments(x)[1],
    )


# ---------------------------------------------------------------------------
# Neural network ensembles
# ---------------------------------------------------------------------------

def _check_passes(net: NetParams, passes: int, require_stochastic: bool) -> None:
    if passes < 2:
        raise ValueError(f"Need at least 2 MC passes, got {passes}")
    if require_stochastic and net.dropout_prob <= 0:
        raise ValueError("MC dropout estimator needs dropout_prob > 0; the passes would all be identical")


def dropout_estimator(
    net: NetParams,
    passes: int,
    alpha: float,
    seed: int,
    *,
    require_stochastic: bool = True,
) -> IntervalEstimator:
    """Gaussian interval over ``passes`` dropout-active forward passes with frozen seeds."""
    _check_passes(net, passes, require_stochastic)
    seeds = tuple(child_seeds(seed, passes))

    def moments(x):
        preds = np.stack([predict(net, x, dropout_active=True, seed=s)[:, 0] for s in seeds])
        return ensemble_moments(preds)

    return _gaussian_estimator("drop", alpha, moments)


def mve_estimator(
    net: NetParams,
    passes: int,
    alpha: float,
    seed: int,
    *,
    require_stochastic: bool = True,
) -> IntervalEstimator:
    """Mean-variance network (heads: mean, log variance) sampled with MC dropout."""
    if net.n_outputs != 2:
        raise ValueError(f"MVE network needs 2 outputs, got {net.n_outputs}")
    _check_passes(net, passes, require_stochastic)
    seeds = tuple(child_seeds(seed, passes))

    def moments(x):
        outs = np.stack([predict(net, x, dropout_active=True, seed=s) for s in seeds])
        return mve_moments(outs[:, :, 0], np.exp(outs[:, :, 1]))

    return _gaussian_estimator("mve", alpha, moments)


def deep_ensemble_estimator(nets: Sequence[NetParams], alpha: float) -> IntervalEstimator:
    nets = tuple(nets)
    if not nets:
        raise ValueError("Deep ensemble is empty")
    for net in nets:
        if net.n_outputs != 2:
            raise ValueError(f"Ensemble members need 2 outputs (mean, log variance), got {net.n_outputs}")

    def moments(x):
        outs = np.stack([predict(net, x) for net in nets])
        return mve_moments(outs[:, :, 0], np.exp(outs[:, :, 1]))

    return _gaussian_estimator("de", alpha, moments)


def _two_head_bounds(net: NetParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    out = predict(net, x)
    first, last = out[:, 0], out[:, -1]
    # crossing heads are swapped
    return np.minimum(first, last), np.maximum(first, last)


def qr_estimator(net: NetParams, alpha: float, softening: float = 1.0) -> IntervalEstimator:
    """Heads trained at levels wα/2 and 1 - wα/2; a middle head, if present, is the median."""
    if net.n_outputs < 2:
        raise ValueError(f"Quantile network needs at least 2 outputs, got {net.n_outputs}")
    if softening <= 0 or softening * alpha >= 1:
        raise ValueError(f"softening must satisfy 0 < w*alpha < 1, got w={softening}, alpha={alpha}")
    point = None
    if net.n_outputs == 3:
        point = lambda x: predict(net, x)[:, 1]  # noqa: E731
    return IntervalEstimator(method="qr", alpha=alpha, bounds=lambda x: _two_head_bounds(net, x), point=point)


def qr_levels(alpha: float, softening: float = 1.0) -> tuple[float, float]:
    return softening * alpha / 2.0, 1.0 - softening * alpha / 2.0


def qd_estimator(net: NetParams, alpha: float, method: str = "qd") -> IntervalEstimator:
    if net.n_outputs != 2:
        raise ValueError(f"QD network needs 2 outputs, got {net.n_outputs}")
    return IntervalEstimator(method=method, alpha=alpha, bounds=lambda x: _two_head_bounds(net, x))


# ---------------------------------------------------------------------------
# GP / forests / reference
# ---------------------------------------------------------------------------

def gp_estimator(gp: GPModel, alpha: float) -> IntervalEstimator:
    def moments(x):
        mean, variance = gp_service.posterior_batch(gp, x)
        return mean, np.sqrt(variance)

    return _gaussian_estimator("gp", alpha, moments)


def oob_error_shifts(errors: np.ndarray, alpha: float) -> tuple[float, float]:
    """Lower/upper shifts from the signed OOB errors D.

    Both tails use the conformal rank convention: the upper shift is the
    ((1-α/2)(1+1/n))-quantile of D and the lower shift mirrors it on -D.
    """
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if errors.shape[0] == 0:
        raise CalibrationError("OOB error set is empty")
    return -conformal_quantile(-errors, alpha / 2.0), conformal_quantile(errors, alpha / 2.0)


def oob_interval_estimator(forest: Forest, train, alpha: float) -> IntervalEstimator:
    """Full-forest prediction shifted by the empirical quantiles of the OOB errors."""
    errors = forest_service.oob_residuals(forest, train)
    lo_shift, hi_shift = oob_error_shifts(errors, alpha)
    log.debug("OOB shifts (%.4g, %.4g) from %d errors", lo_shift, hi_shift, errors.shape[0])

    def bounds(x):
        center = forest_service.predict_batch(forest, x)
        return center + lo_shift, center + hi_shift

    return IntervalEstimator(
        method="rf_oob", alpha=alpha, bounds=bounds, point=lambda x: forest_service.predict_batch(forest, x)
    )


def qrf_estimator(forest: Forest, alpha: float) -> IntervalEstimator:
    betas = (alpha / 2.0, 1.0 - alpha / 2.0)

    def bounds(x):
        q = forest_service.qrf_quantiles_batch(forest, x, betas)
        return q[:, 0], q[:, 1]

    return IntervalEstimator(
        method="qrf", alpha=alpha, bounds=bounds, point=lambda x: forest_service.predict_batch(forest, x)
    )


def unconditional_quantiles(targets: np.ndarray, alpha: float) -> tuple[float, float]:
    return empirical_quantile(targets, alpha / 2.0), empirical_quantile(targets, 1.0 - alpha / 2.0)


def featureless_estimator(targets: np.ndarray, alpha: float) -> IntervalEstimator:
    """The same interval for every x: the unconditional α/2 and 1-α/2 target quantiles."""
    lo, hi = unconditional_quantiles(targets, alpha)
    center = float(np.mean(targets))
    if math.isinf(lo) or math.isinf(hi):
        raise ValueError("Unconditional quantiles are unbounded")
    return IntervalEstimator(
        method="featureless",
        alpha=alpha,
        bounds=lambda x: (np.full(x.shape[0], lo), np.full(x.shape[0], hi)),
        point=lambda x: np.full(x.shape[0], center),
    )


def invert_interval_scale(
    lower: np.ndarray, upper: np.ndarray, target_mean: float, target_std: float
) -> tuple[np.ndarray, np.ndarray]:
    """Map standardized interval endpoints back to original target units."""
    if target_std <= 0:
        raise ValueError(f"target_std must be positive, got {target_std}")
    return np.asarray(lower) * target_std + target_mean, np.asarray(upper) * target_std + target_mean
