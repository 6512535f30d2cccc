"""Adam training loop with L2 penalty, optional FGSM adversarial term and early stopping."""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from app.errors import DataError, TrainingDivergedError
from app.models.domain import Dataset
from app.models.schemas import EarlyStopping, LossKind, LossTag, TrainConfig
from app.services.nn.losses import batch_objective, mean_objective
from app.services.nn.network import PARAM_ORDER, NetParams, backward, dropout_mask, forward_batch
from app.utils import check_deadline, make_rng

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)  # index 0 = before the first update
    val_loss: list[float] = field(default_factory=list)
    val_width: list[float] = field(default_factory=list)
    val_coverage: list[float] = field(default_factory=list)
    weight_norm: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def loss_and_gradients(
    net: NetParams,
    x: np.ndarray,
    y: np.ndarray,
    loss: LossKind,
    l2_lambda: float = 0.0,
    mask: Optional[np.ndarray] = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Objective (batch loss + l2 * ||theta||^2), parameter gradients and input gradient."""
    out, cache = forward_batch(net, x, mask)
    value, d_out = batch_objective(loss, out, y)
    grads, dx = backward(net, cache, d_out)
    if l2_lambda:
        for name in PARAM_ORDER:
            param = getattr(net, name)
            value += l2_lambda * float(np.sum(param * param))
            grads[name] = grads[name] + 2.0 * l2_lambda * param
    return value, grads, dx


def fgsm_perturb(
    net: NetParams,
    batch: np.ndarray,
    y: np.ndarray,
    eta: np.ndarray,
    loss: LossKind,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """x' = x + eta * sign(dL/dx) row by row; sign(0) = 0."""
    batch = np.asarray(batch, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64).reshape(-1)
    if eta.shape[0] != net.n_inputs or batch.ndim != 2 or batch.shape[1] != net.n_inputs:
        raise ValueError(f"eta {eta.shape} and batch {batch.shape} must match {net.n_inputs} inputs")
    if np.any(eta < 0):
        raise ValueError("eta entries must be non-negative")
    _, _, dx = loss_and_gradients(net, batch, y, loss, 0.0, mask)
    return batch + eta * np.sign(dx)


def interval_from_outputs(loss: LossKind, out: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Read (lower, upper) off a two-output network for interval early stopping."""
    if loss.tag == LossTag.GAUSS_NLL:
        half = ndtri(1.0 - alpha / 2.0) * np.exp(0.5 * out[:, 1])
        return out[:, 0] - half, out[:, 0] + half
    if out.shape[1] < 2:
        raise ValueError("Interval early stopping needs a network with at least two outputs")
    first, last = out[:, 0], out[:, -1]
    return np.minimum(first, last), np.maximum(first, last)


class _Adam:
    def __init__(self, net: NetParams, learning_rate: float):
        self.lr = learning_rate
        self.t = 0
        self.m = {name: np.zeros_like(getattr(net, name)) for name in PARAM_ORDER}
        self.v = {name: np.zeros_like(getattr(net, name)) for name in PARAM_ORDER}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for name in PARAM_ORDER:
            g = grads[name]
            self.m[name] = ADAM_BETA1 * self.m[name] + (1.0 - ADAM_BETA1) * g
            self.v[name] = ADAM_BETA2 * self.v[name] + (1.0 - ADAM_BETA2) * g * g
            params[name] -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + ADAM_EPS)


def train_with_history(
    net: NetParams,
    train: Dataset,
    val: Optional[Dataset],
    cfg: TrainConfig,
    loss: LossKind,
    *,
    deadline: Optional[float] = None,
) -> tuple[NetParams, TrainHistory]:
    """Minibatch Adam; ``deadline`` (a time.monotonic() value) is checked once per epoch."""
    if train.n < 1:
        raise DataError("Training set is empty")
    if train.d != net.n_inputs:
        raise ValueError(f"Network expects {net.n_inputs} features, training data has {train.d}")
    stopping = cfg.early_stopping
    if stopping != EarlyStopping.NONE and (val is None or val.n == 0):
        raise DataError(f"Early stopping '{stopping.value}' needs a non-empty validation set")

    rng = make_rng(cfg.seed)
    x, y = train.features, train.targets
    batch_size = cfg.resolved_batch_size(train.n)
    eta = None
    if cfg.adversarial_frac > 0:
        eta = cfg.adversarial_frac * np.ptp(x, axis=0)

    params = {name: np.array(getattr(net, name)) for name in PARAM_ORDER}
    current = net
    optimizer = _Adam(net, cfg.learning_rate)
    history = TrainHistory()
    best_net, best_key, since_best = net, None, 0

    def record(epoch: int, model: NetParams) -> Optional[tuple]:
        out, _ = forward_batch(model, x)
        history.train_loss.append(mean_objective(loss, out, y))
        history.weight_norm.append(model.weight_norm())
        if not np.isfinite(history.train_loss[-1]):
            log.error("Loss became %s at epoch %d", history.train_loss[-1], epoch)
            raise TrainingDivergedError(f"Non-finite training loss at epoch {epoch}", epoch=epoch)
        if val is None or stopping == EarlyStopping.NONE:
            return None
        val_out, _ = forward_batch(model, val.features)
        history.val_loss.append(mean_objective(loss, val_out, val.targets))
        if stopping == EarlyStopping.LOSS:
            return (history.val_loss[-1],)
        lo, hi = interval_from_outputs(loss, val_out, cfg.alpha)
        width = float(np.mean(hi - lo))
        coverage = float(np.mean((lo <= val.targets) & (val.targets <= hi)))
        history.val_width.append(width)
        history.val_coverage.append(coverage)
        # valid epochs (coverage >= 1 - alpha) rank by width; otherwise by missing coverage
        if coverage >= 1.0 - cfg.alpha:
            return (0, width)
        return (1, -coverage, width)

    best_key = record(0, net)
    for epoch in range(1, cfg.epochs + 1):
        check_deadline(deadline, f"Training (epoch {epoch})")
        order = rng.permutation(train.n)
        for start in range(0, train.n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = x[idx], y[idx]
            mask = dropout_mask(current.dropout_prob, (len(idx), current.n_hidden), rng) if current.dropout_prob > 0 else None
            value, grads, _ = loss_and_gradients(current, xb, yb, loss, cfg.l2_lambda, mask)
            if eta is not None:
                x_adv = fgsm_perturb(current, xb, yb, eta, loss, mask)
                adv_value, adv_grads, _ = loss_and_gradients(current, x_adv, yb, loss, 0.0, mask)
                value += adv_value
                grads = {name: grads[name] + adv_grads[name] for name in PARAM_ORDER}
            if not np.isfinite(value):
                log.error("Loss became %s at epoch %d", value, epoch)
                raise TrainingDivergedError(f"Non-finite training loss at epoch {epoch}", epoch=epoch)
            optimizer.step(params, grads)
            current = NetParams(**params, dropout_prob=net.dropout_prob)

        key = record(epoch, current)
        history.stopped_epoch = epoch
        if key is None:
            continue
        if best_key is None or key < best_key:
            best_net, best_key, since_best = current, key, 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log.debug("Early stopping at epoch %d (best %d)", epoch, history.best_epoch)
                break

    final = current if stopping == EarlyStopping.NONE else best_net
    if stopping == EarlyStopping.NONE:
        history.best_epoch = history.stopped_epoch
    log.debug(
        "Trained %s net: epochs=%d best=%d loss %.4g -> %.4g",
        loss.tag.value, history.stopped_epoch, history.best_epoch, history.train_loss[0], history.train_loss[-1],
    )
    return final, history


def train(
    net: NetParams,
    train: Dataset,
    val: Optional[Dataset],
    cfg: TrainConfig,
    loss: LossKind,
    *,
    deadline: Optional[float] = None,
) -> NetParams:
    return train_with_history(net, train, val, cfg, loss, deadline=deadline)[0]
