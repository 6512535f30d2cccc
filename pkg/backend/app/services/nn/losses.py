"""
Training losses and their gradients w.r.t. network outputs.

Scalar forms (``loss_*``) follow the textbook definitions and are what the
tests pin down. ``batch_objective`` turns a network output matrix into the
scalar the trainer minimizes plus dObjective/dOutputs:

  mse, gauss_nll, pinball  summed over rows (and quantile levels)
  qd, lube                 batch-level formulas (coverage is a batch statistic)
"""
from typing import Union

import numpy as np
from scipy.special import expit

from app.models.schemas import LossKind, LossTag

ArrayLike = Union[float, np.ndarray]


# ---------------------------------------------------------------------------
# Per-point losses
# ---------------------------------------------------------------------------

def loss_mse(pred: ArrayLike, y: ArrayLike) -> ArrayLike:
    return (np.asarray(pred) - np.asarray(y)) ** 2


def loss_gauss_nll(mean: ArrayLike, log_var: ArrayLike, y: ArrayLike) -> ArrayLike:
    """|y - mean|^2 / (2 var) + log(var) / 2 with var = exp(log_var)."""
    mean, log_var, y = np.asarray(mean), np.asarray(log_var), np.asarray(y)
    return 0.5 * (y - mean) ** 2 * np.exp(-log_var) + 0.5 * log_var


def grad_gauss_nll(mean: ArrayLike, log_var: ArrayLike, y: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    mean, log_var, y = np.asarray(mean), np.asarray(log_var), np.asarray(y)
    inv_var = np.exp(-log_var)
    d_mean = (mean - y) * inv_var
    d_log_var = 0.5 - 0.5 * (y - mean) ** 2 * inv_var
    return d_mean, d_log_var


def loss_pinball(q_hat: ArrayLike, y: ArrayLike, level: ArrayLike) -> ArrayLike:
    q_hat, y, level = np.asarray(q_hat), np.asarray(y), np.asarray(level)
    return np.maximum((1.0 - level) * (q_hat - y), level * (y - q_hat))


def grad_pinball(q_hat: ArrayLike, y: ArrayLike, level: ArrayLike) -> ArrayLike:
    """Subgradient w.r.t. q_hat; 0 at the kink."""
    q_hat, y, level = np.asarray(q_hat), np.asarray(y), np.asarray(level)
    return np.where(q_hat > y, 1.0 - level, np.where(q_hat < y, -level, 0.0))


# ---------------------------------------------------------------------------
# Direct interval losses
# ---------------------------------------------------------------------------

def _capture(l: np.ndarray, u: np.ndarray, y: np.ndarray, softness: float, hard: bool):
    """Capture indicator k and its derivatives dk/dl, dk/du."""
    if hard:
        k = ((l <= y) & (y <= u)).astype(np.float64)
        zeros = np.zeros_like(k)
        return k, zeros, zeros
    a = expit(softness * (y - l))
    b = expit(softness * (u - y))
    k = a * b
    dk_dl = -softness * a * (1.0 - a) * b
    dk_du = softness * a * b * (1.0 - b)
    return k, dk_dl, dk_du


def _check_interval_batch(l, u, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    l, u, y = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (l, u, y))
    if not (l.shape == u.shape == y.shape):
        raise ValueError(f"Interval loss needs equal lengths, got {l.shape}, {u.shape}, {y.shape}")
    if l.shape[0] == 0:
        raise ValueError("Interval loss needs at least one point")
    return l, u, y


def qd_value_and_grad(
    l: np.ndarray,
    u: np.ndarray,
    y: np.ndarray,
    alpha: float,
    lambda_qd: float,
    softness: float,
    hard: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    l, u, y = _check_interval_batch(l, u, y)
    if softness <= 0:
        raise ValueError(f"softness must be positive, got {softness}")
    n = l.shape[0]
    width = u - l
    k, dk_dl, dk_du = _capture(l, u, y, softness, hard)
    captured = k.sum()

    if captured > 0:
        mpiw = float((k * width).sum() / captured)
        d_mpiw_dl = ((-k + width * dk_dl) * captured - (k * width).sum() * dk_dl) / captured**2
        d_mpiw_du = ((k + width * dk_du) * captured - (k * width).sum() * dk_du) / captured**2
    else:
        mpiw = 0.0
        d_mpiw_dl = np.zeros(n)
        d_mpiw_du = np.zeros(n)

    coverage = captured / n
    scale = lambda_qd * n / (alpha * (1.0 - alpha))
    shortfall = max(0.0, (1.0 - alpha) - coverage)
    penalty = scale * shortfall**2
    # dPenalty/dCoverage = -2 scale shortfall; dCoverage/dk_i = 1/n
    d_pen = -2.0 * scale * shortfall / n

    return mpiw + penalty, d_mpiw_dl + d_pen * dk_dl, d_mpiw_du + d_pen * dk_du


def loss_qd(
    l: np.ndarray,
    u: np.ndarray,
    y: np.ndarray,
    alpha: float,
    lambda_qd: float,
    softness: float,
    hard: bool = False,
) -> float:
    """Captured MPIW + lambda * n / (alpha (1 - alpha)) * max(0, (1 - alpha) - C)^2."""
    return qd_value_and_grad(l, u, y, alpha, lambda_qd, softness, hard)[0]


def lube_value_and_grad(
    l: np.ndarray,
    u: np.ndarray,
    y: np.ndarray,
    alpha: float,
    lambda_lube: float,
    target_range: float,
    softness: float = 160.0,
    hard: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    l, u, y = _check_interval_batch(l, u, y)
    n = l.shape[0]
    mpiw = float(np.mean(u - l))
    k, dk_dl, dk_du = _capture(l, u, y, softness, hard)
    coverage = k.mean()
    shortfall = max(0.0, (1.0 - alpha) - coverage)
    boost = np.exp(lambda_lube * shortfall)
    value = mpiw / target_range * (1.0 + boost)
    # dValue/dCoverage, nonzero only below the nominal coverage
    d_cov = -mpiw / target_range * boost * lambda_lube if shortfall > 0 else 0.0
    d_mpiw = (1.0 + boost) / target_range / n
    return value, -d_mpiw + d_cov * dk_dl / n, d_mpiw + d_cov * dk_du / n


def loss_lube(
    l: np.ndarray,
    u: np.ndarray,
    y: np.ndarray,
    alpha: float,
    lambda_lube: float,
    target_range: float,
    softness: float = 160.0,
    hard: bool = True,
) -> float:
    """MPIW / r * (1 + exp(lambda * max(0, (1 - alpha) - C))); hard coverage by default."""
    return lube_value_and_grad(l, u, y, alpha, lambda_lube, target_range, softness, hard)[0]


# ---------------------------------------------------------------------------
# Batch objective
# ---------------------------------------------------------------------------

def batch_objective(loss: LossKind, out: np.ndarray, y: np.ndarray, hard: bool = False) -> tuple[float, np.ndarray]:
    """Scalar objective and dObjective/dOut for outputs ``out`` (n, k)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if out.shape[0] != y.shape[0]:
        raise ValueError(f"{out.shape[0]} outputs for {y.shape[0]} targets")
    if out.shape[1] != loss.n_outputs:
        raise ValueError(f"Loss {loss.tag.value} needs {loss.n_outputs} outputs, network has {out.shape[1]}")
    d_out = np.zeros_like(out)

    if loss.tag == LossTag.MSE:
        resid = out[:, 0] - y
        d_out[:, 0] = 2.0 * resid
        return float(np.sum(resid**2)), d_out

    if loss.tag == LossTag.GAUSS_NLL:
        mean, log_var = out[:, 0], out[:, 1]
        d_out[:, 0], d_out[:, 1] = grad_gauss_nll(mean, log_var, y)
        return float(np.sum(loss_gauss_nll(mean, log_var, y))), d_out

    if loss.tag == LossTag.PINBALL:
        levels = np.asarray(loss.levels)
        yy = y[:, None]
        d_out[:] = grad_pinball(out, yy, levels)
        return float(np.sum(loss_pinball(out, yy, levels))), d_out

    if loss.tag == LossTag.QD:
        value, d_l, d_u = qd_value_and_grad(out[:, 0], out[:, 1], y, loss.alpha, loss.lambda_qd, loss.softness, hard)
    elif loss.tag == LossTag.LUBE:
        value, d_l, d_u = lube_value_and_grad(
            out[:, 0], out[:, 1], y, loss.alpha, loss.lambda_lube, loss.target_range, loss.softness, hard
        )
    else:
        raise ValueError(f"Unknown loss {loss.tag}")
    d_out[:, 0], d_out[:, 1] = d_l, d_u
    return float(value), d_out


def mean_objective(loss: LossKind, out: np.ndarray, y: np.ndarray) -> float:
    """Per-row objective for monitoring; interval losses use their hard (evaluation) form."""
    if loss.tag in (LossTag.QD, LossTag.LUBE):
        return batch_objective(loss, out, y, hard=True)[0]
    return batch_objective(loss, out, y)[0] / out.shape[0]
