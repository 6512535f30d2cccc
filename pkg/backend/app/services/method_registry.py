"""
Benchmark method registry: name -> builder that trains on one split and
returns a fitted ``IntervalEstimator``.

Builders receive a ``MethodContext`` with the standardized split already cut:

  fit    proper-train minus the tuning slice (what models are trained on)
  tune   the tuning slice (early stopping, dropout tuning); may be None
  cal    calibration set (equals ``fit`` in unsafe mode)
  full   fit + cal, for the fully trained (``train_on: full``) variants
"""
import logging
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from app.config import get_settings
from app.errors import BudgetExceededError, ConfigError
from app.models.domain import Dataset, IntervalEstimator
from app.models.schemas import ForestConfig, GPHyper, LossKind, LossTag, MethodInfo, TrainConfig
from app.services import conformal_service, forest_service, gp_service, interval_service, linear_service
from app.services.metrics_service import coverage_of, mean_width_of
from app.services.nn.network import init_net, predict
from app.services.nn.trainer import train
from app.utils import child_seeds

log = logging.getLogger(__name__)

DROPOUT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 11))
DISPERSION_FLOOR = 1e-6


@dataclass(frozen=True)
class MethodContext:
    fit: Dataset
    tune: Optional[Dataset]
    cal: Optional[Dataset]
    full: Dataset
    alpha: float
    seed: int
    unsafe: bool = False
    deadline: Optional[float] = None  # time.monotonic() value; None = unlimited


@dataclass
class FittedMethod:
    estimator: IntervalEstimator
    tuned: str = ""


Builder = Callable[[MethodContext, dict[str, Any]], FittedMethod]


@dataclass(frozen=True)
class MethodEntry:
    name: str
    family: str
    conformal: bool
    description: str
    build: Builder

    def info(self) -> MethodInfo:
        return MethodInfo(name=self.name, family=self.family, conformal=self.conformal, description=self.description)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _training_set(ctx: MethodContext, params: dict[str, Any], conformal: bool) -> Dataset:
    train_on = params.get("train_on", "proper")
    if train_on not in ("proper", "full"):
        raise ConfigError(f"train_on must be 'proper' or 'full', got {train_on!r}")
    if train_on == "full":
        if conformal:
            raise ConfigError("Conformal methods train on proper-train only; train_on='full' is not allowed")
        return ctx.full
    return ctx.fit


def _calibration_set(ctx: MethodContext) -> Dataset:
    if ctx.cal is None:
        raise ConfigError("Conformal method needs a calibration set (cal_frac > 0)")
    return ctx.cal


def _train_config(ctx: MethodContext, params: dict[str, Any], seed: int, **defaults: Any) -> TrainConfig:
    values: dict[str, Any] = {
        "alpha": ctx.alpha,
        "seed": seed,
        "early_stopping": "loss" if ctx.tune is not None else "none",
        **defaults,
    }
    values.update({k: v for k, v in params.items() if k in TrainConfig.model_fields})
    if ctx.tune is None:
        values["early_stopping"] = "none"
    return TrainConfig(**values)


def _train_net(
    ctx: MethodContext,
    data: Dataset,
    params: dict[str, Any],
    loss: LossKind,
    seed: int,
    dropout_prob: float = 0.0,
    **train_defaults: Any,
):
    init_seed, train_seed = child_seeds(seed, 2)
    net = init_net(data.d, loss.n_outputs, init_seed, dropout_prob=dropout_prob)
    cfg = _train_config(ctx, params, train_seed, **train_defaults)
    return train(net, data, ctx.tune, cfg, loss, deadline=ctx.deadline)


def _passes(params: dict[str, Any]) -> int:
    return int(params.get("mc_samples", get_settings().mc_samples))


def _wrap(ctx: MethodContext, est: IntervalEstimator, params: dict[str, Any], train_rows: np.ndarray) -> IntervalEstimator:
    """Conformalize a fitted estimator with the interval (default) or normalized measure."""
    cal = _calibration_set(ctx)
    measure = params.get("measure", "interval")
    if measure == "interval":
        return conformal_service.conformalize_interval(
            est, cal, ctx.alpha, train_row_ids=train_rows, allow_overlap=ctx.unsafe
        )
    if measure == "normalized":
        if est.point is None or est.spread is None:
            raise ConfigError(f"{est.method} has no point/spread pair for the normalized measure")
        floor = float(params.get("dispersion_floor", DISPERSION_FLOOR))
        return conformal_service.conformalize_normalized(
            est.point, lambda x: est.spread(x) + floor, cal, ctx.alpha,
            train_row_ids=train_rows, allow_overlap=ctx.unsafe,
        )
    raise ConfigError(f"Unknown measure {measure!r}; use 'interval' or 'normalized'")


def _point_cp(ctx: MethodContext, point, train_rows: np.ndarray) -> IntervalEstimator:
    return conformal_service.conformalize_point(
        point, _calibration_set(ctx), ctx.alpha, train_row_ids=train_rows, allow_overlap=ctx.unsafe
    )


def _forest(data: Dataset, params: dict[str, Any], seed: int) -> forest_service.Forest:
    fields = {k: v for k, v in params.items() if k in ForestConfig.model_fields}
    cfg = ForestConfig(**{"seed": seed, **fields})
    return forest_service.fit_forest(data, cfg)


# ---------------------------------------------------------------------------
# Point predictors + conformal
# ---------------------------------------------------------------------------

def build_nn_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    net = _train_net(ctx, data, params, LossKind.mse(), ctx.seed)
    return FittedMethod(_point_cp(ctx, lambda x: predict(net, x)[:, 0], data.row_ids))


def build_nn_norm_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    p = float(params.get("dropout_prob", 0.1))
    net = _train_net(ctx, data, params, LossKind.mse(), ctx.seed, dropout_prob=p)
    drop = interval_service.dropout_estimator(net, _passes(params), ctx.alpha, ctx.seed)
    floor = float(params.get("dispersion_floor", DISPERSION_FLOOR))
    est = conformal_service.conformalize_normalized(
        lambda x: predict(net, x)[:, 0],
        lambda x: drop.spread(x) + floor,
        _calibration_set(ctx),
        ctx.alpha,
        train_row_ids=data.row_ids,
        allow_overlap=ctx.unsafe,
    )
    return FittedMethod(est, tuned=f"dropout_prob={p}")


def build_ridge_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    model = linear_service.fit_ridge(data, float(params.get("l2", 1.0)))
    return FittedMethod(_point_cp(ctx, model.predict, data.row_ids))


def build_rf_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    forest = _forest(data, params, ctx.seed)
    return FittedMethod(_point_cp(ctx, lambda x: forest_service.predict_batch(forest, x), data.row_ids))


# ---------------------------------------------------------------------------
# Forests
# ---------------------------------------------------------------------------

def build_rf_oob(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=False)
    forest = _forest(data, params, ctx.seed)
    return FittedMethod(interval_service.oob_interval_estimator(forest, data, ctx.alpha))


def build_rf_oob_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    # calibrates on the OOB residuals of the training set itself, no calibration split
    data = _training_set(ctx, params, conformal=True)
    forest = _forest(data, params, ctx.seed)
    return FittedMethod(conformal_service.conformalize_oob(forest, data, ctx.alpha))


def build_qrf(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=False)
    forest = _forest(data, params, ctx.seed)
    return FittedMethod(interval_service.qrf_estimator(forest, ctx.alpha))


def build_qrf_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    forest = _forest(data, params, ctx.seed)
    est = interval_service.qrf_estimator(forest, ctx.alpha)
    return FittedMethod(_wrap(ctx, est, params, data.row_ids))


# ---------------------------------------------------------------------------
# MC dropout / MVE / deep ensembles
# ---------------------------------------------------------------------------

def _selection_key(width: float, cover: float, alpha: float) -> tuple:
    if cover >= 1.0 - alpha:
        return (0, width)
    return (1, -cover, width)


def tune_dropout(ctx: MethodContext, data: Dataset, params: dict[str, Any]) -> tuple[float, object]:
    """Grid search over dropout probabilities on the tuning slice.

    Picks the narrowest valid validation interval; when no probability reaches
    1 - α, the best-covering one.
    """
    if ctx.tune is None:
        raise ConfigError("Dropout tuning needs a tuning slice (tuning_frac > 0)")
    grid = tuple(params.get("dropout_grid", DROPOUT_GRID))
    best = None
    for p in grid:
        net = _train_net(ctx, data, params, LossKind.mse(), ctx.seed, dropout_prob=float(p))
        est = interval_service.dropout_estimator(net, _passes(params), ctx.alpha, ctx.seed)
        lower, upper = est.predict_intervals(ctx.tune.features)
        key = _selection_key(mean_width_of(lower, upper), coverage_of(lower, upper, ctx.tune.targets), ctx.alpha)
        if best is None or key < best[0]:
            best = (key, float(p), net)
    log.debug("Tuned dropout_prob=%.2f", best[1])
    return best[1], best[2]


def _dropout_net(ctx: MethodContext, data: Dataset, params: dict[str, Any]):
    p = params.get("dropout_prob", "tune")
    if p == "tune":
        return tune_dropout(ctx, data, params)
    p = float(p)
    return p, _train_net(ctx, data, params, LossKind.mse(), ctx.seed, dropout_prob=p)


def build_drop(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=False)
    p, net = _dropout_net(ctx, data, params)
    est = interval_service.dropout_estimator(net, _passes(params), ctx.alpha, ctx.seed)
    return FittedMethod(est, tuned=f"dropout_prob={p}")


def build_drop_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    p, net = _dropout_net(ctx, data, params)
    est = interval_service.dropout_estimator(net, _passes(params), ctx.alpha, ctx.seed)
    return FittedMethod(_wrap(ctx, est, params, data.row_ids), tuned=f"dropout_prob={p}")


def _mve(ctx: MethodContext, data: Dataset, params: dict[str, Any]) -> IntervalEstimator:
    p = float(params.get("dropout_prob", 0.1))
    net = _train_net(ctx, data, params, LossKind.gauss_nll(), ctx.seed, dropout_prob=p)
    return interval_service.mve_estimator(net, _passes(params), ctx.alpha, ctx.seed)


def build_mve(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    return FittedMethod(_mve(ctx, _training_set(ctx, params, conformal=False), params))


def build_mve_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    return FittedMethod(_wrap(ctx, _mve(ctx, data, params), params, data.row_ids))


def _deep_ensemble(ctx: MethodContext, data: Dataset, params: dict[str, Any]) -> IntervalEstimator:
    members = int(params.get("members", get_settings().ensemble_size))
    if members < 1:
        raise ConfigError(f"Deep ensemble needs at least one member, got {members}")
    nets = [
        _train_net(ctx, data, params, LossKind.gauss_nll(), seed, adversarial_frac=0.01)
        for seed in child_seeds(ctx.seed, members)
    ]
    return interval_service.deep_ensemble_estimator(nets, ctx.alpha)


def build_de(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    return FittedMethod(_deep_ensemble(ctx, _training_set(ctx, params, conformal=False), params))


def build_de_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    return FittedMethod(_wrap(ctx, _deep_ensemble(ctx, data, params), params, data.row_ids))


# ---------------------------------------------------------------------------
# Direct interval estimators
# ---------------------------------------------------------------------------

def _qr(ctx: MethodContext, data: Dataset, params: dict[str, Any], softening: float) -> IntervalEstimator:
    loss = LossKind.pinball(*interval_service.qr_levels(ctx.alpha, softening))
    net = _train_net(ctx, data, params, loss, ctx.seed)
    return interval_service.qr_estimator(net, ctx.alpha, softening)


def build_qr(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    w = float(params.get("softening", 1.0))
    return FittedMethod(_qr(ctx, _training_set(ctx, params, conformal=False), params, w), tuned=f"softening={w}")


def build_qr_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    w = float(params.get("softening", 2.0))
    est = _qr(ctx, data, params, w)
    return FittedMethod(_wrap(ctx, est, {**params, "measure": "interval"}, data.row_ids), tuned=f"softening={w}")


def _qd(ctx: MethodContext, data: Dataset, params: dict[str, Any]) -> IntervalEstimator:
    loss = LossKind.qd(
        ctx.alpha,
        lambda_qd=float(params.get("lambda_qd", 15.0)),
        softness=float(params.get("softness", get_settings().qd_softness)),
    )
    net = _train_net(ctx, data, params, loss, ctx.seed, early_stopping="interval")
    return interval_service.qd_estimator(net, ctx.alpha)


def build_qd(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    return FittedMethod(_qd(ctx, _training_set(ctx, params, conformal=False), params))


def build_qd_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    return FittedMethod(_wrap(ctx, _qd(ctx, data, params), {**params, "measure": "interval"}, data.row_ids))


def build_lube(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=False)
    loss = LossKind(
        tag=LossTag.LUBE,
        alpha=ctx.alpha,
        lambda_lube=float(params.get("lambda_lube", 10.0)),
        softness=float(params.get("softness", get_settings().qd_softness)),
        target_range=float(np.ptp(data.targets)) or 1.0,
    )
    net = _train_net(ctx, data, params, loss, ctx.seed, early_stopping="interval")
    return FittedMethod(interval_service.qd_estimator(net, ctx.alpha, method="lube"))


# ---------------------------------------------------------------------------
# Gaussian process
# ---------------------------------------------------------------------------

def _gp(ctx: MethodContext, data: Dataset, params: dict[str, Any]) -> tuple[IntervalEstimator, str]:
    limit = int(params.get("max_n", get_settings().gp_max_n))
    if data.n > limit:
        raise BudgetExceededError(f"Exact GP on n={data.n} exceeds gp_max_n={limit}")
    init = GPHyper(**{k: v for k, v in params.items() if k in GPHyper.model_fields})
    gp = gp_service.fit_gp(data, init, int(params.get("iters", 50)), max_n=limit, deadline=ctx.deadline)
    h = gp.hyper
    tuned = f"lengthscale={h.lengthscale:.4g};signal_variance={h.signal_variance:.4g};noise_variance={h.noise_variance:.4g}"
    return interval_service.gp_estimator(gp, ctx.alpha), tuned


def build_gp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    est, tuned = _gp(ctx, _training_set(ctx, params, conformal=False), params)
    return FittedMethod(est, tuned=tuned)


def build_gp_cp(ctx: MethodContext, params: dict[str, Any]) -> FittedMethod:
    data = _training_set(ctx, params, conformal=True)
    est, tuned = _gp(ctx, data, params)
    return FittedMethod(_wrap(ctx, est, params, data.row_ids), tuned=tuned)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_ENTRIES = (
    MethodEntry("nn_cp", "CP", True, "Point network (MSE) + conformal point measure", build_nn_cp),
    MethodEntry("nn_norm_cp", "CP", True, "Point network + normalized measure, dropout std as dispersion", build_nn_norm_cp),
    MethodEntry("ridge_cp", "CP", True, "Ridge regression + conformal point measure", build_ridge_cp),
    MethodEntry("rf_cp", "CP", True, "Random forest mean + conformal point measure", build_rf_cp),
    MethodEntry("rf_oob", "ensemble", False, "Forest prediction shifted by OOB error quantiles", build_rf_oob),
    MethodEntry("rf_oob_cp", "CP", True, "Forest with OOB residuals as calibration scores", build_rf_oob_cp),
    MethodEntry("qrf", "ensemble", False, "Quantile regression forest", build_qrf),
    MethodEntry("qrf_cp", "CP", True, "Quantile regression forest + interval measure", build_qrf_cp),
    MethodEntry("drop", "ensemble", False, "MC dropout network, Gaussian interval", build_drop),
    MethodEntry("drop_cp", "CP", True, "MC dropout + conformal (interval or normalized measure)", build_drop_cp),
    MethodEntry("mve", "ensemble", False, "Mean-variance network with MC dropout", build_mve),
    MethodEntry("mve_cp", "CP", True, "Mean-variance network + conformal", build_mve_cp),
    MethodEntry("de", "ensemble", False, "Deep ensemble of mean-variance networks, FGSM training", build_de),
    MethodEntry("de_cp", "CP", True, "Deep ensemble + conformal", build_de_cp),
    MethodEntry("qr", "direct", False, "Two-head quantile regression network (pinball loss)", build_qr),
    MethodEntry("qr_cp", "CP", True, "Conformalized quantile regression", build_qr_cp),
    MethodEntry("qd", "direct", False, "Two-head network trained with the QD loss", build_qd),
    MethodEntry("qd_cp", "CP", True, "QD network + interval measure", build_qd_cp),
    MethodEntry("lube", "direct", False, "Two-head network trained with a soft LUBE loss", build_lube),
    MethodEntry("gp", "Bayesian", False, "Exact GP, RBF kernel, marginal-likelihood fit", build_gp),
    MethodEntry("gp_cp", "CP", True, "Exact GP + conformal", build_gp_cp),
)

REGISTRY: dict[str, MethodEntry] = {entry.name: entry for entry in _ENTRIES}


def get_method(name: str) -> MethodEntry:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"Unknown method {name!r}; known: {', '.join(sorted(REGISTRY))}") from None


def list_methods() -> list[MethodInfo]:
    return [entry.info() for entry in _ENTRIES]
