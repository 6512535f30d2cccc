import numpy as np
import pytest

from app.errors import BudgetExceededError, CalibrationError, ConfigError
from app.services import method_registry
from app.services.data_service import concat, standardize
from app.services.method_registry import MethodContext, get_method, list_methods

FAST_NET = {"epochs": 5, "learning_rate": 1e-2, "mc_samples": 5}


@pytest.fixture
def ctx(sine_ds):
    scaled, _ = standardize(sine_ds)
    fit, tune, cal = scaled.subset(range(0, 200)), scaled.subset(range(200, 220)), scaled.subset(range(220, 320))
    return MethodContext(fit=fit, tune=tune, cal=cal, full=concat(fit, cal), alpha=0.1, seed=3)


def test_registry_lists_every_method():
    names = [info.name for info in list_methods()]
    assert len(names) == 21 and len(set(names)) == 21
    assert {"nn_cp", "rf_oob_cp", "qr_cp", "gp", "lube"} <= set(names)
    assert all(info.conformal == info.name.endswith("_cp") for info in list_methods())


def test_unknown_method():
    with pytest.raises(ConfigError, match="known"):
        get_method("svm")


@pytest.mark.parametrize(
    "name,params",
    [
        ("nn_cp", FAST_NET),
        ("nn_norm_cp", FAST_NET),
        ("ridge_cp", {}),
        ("rf_cp", {"n_trees": 10}),
        ("rf_oob", {"n_trees": 10}),
        ("rf_oob_cp", {"n_trees": 10}),
        ("qrf", {"n_trees": 10, "min_leaf": 5}),
        ("qrf_cp", {"n_trees": 10, "min_leaf": 5}),
        ("drop", {**FAST_NET, "dropout_prob": 0.1}),
        ("drop_cp", {**FAST_NET, "dropout_prob": 0.1, "measure": "normalized"}),
        ("mve", FAST_NET),
        ("mve_cp", FAST_NET),
        ("de", {**FAST_NET, "members": 2}),
        ("de_cp", {**FAST_NET, "members": 2}),
        ("qr", FAST_NET),
        ("qr_cp", FAST_NET),
        ("qd", FAST_NET),
        ("qd_cp", FAST_NET),
        ("lube", FAST_NET),
        ("gp", {"iters": 3}),
        ("gp_cp", {"iters": 3}),
    ],
)
def test_every_method_builds_a_valid_estimator(ctx, name, params):
    fitted = get_method(name).build(ctx, dict(params))
    lo, hi = fitted.estimator.predict_intervals(ctx.cal.features[:10])
    assert np.all(lo <= hi)
    assert fitted.estimator.alpha == 0.1


def test_dropout_tuning_picks_from_grid(ctx):
    fitted = get_method("drop").build(ctx, {**FAST_NET, "dropout_grid": [0.1, 0.3]})
    assert fitted.tuned in ("dropout_prob=0.1", "dropout_prob=0.3")


def test_dropout_tuning_needs_tuning_slice(ctx):
    no_tune = MethodContext(fit=ctx.fit, tune=None, cal=ctx.cal, full=ctx.full, alpha=0.1, seed=0)
    with pytest.raises(ConfigError):
        get_method("drop").build(no_tune, FAST_NET)


def test_conformal_methods_need_calibration(ctx):
    no_cal = MethodContext(fit=ctx.fit, tune=ctx.tune, cal=None, full=ctx.fit, alpha=0.1, seed=0)
    with pytest.raises(ConfigError):
        get_method("ridge_cp").build(no_cal, {})


def test_full_training_only_for_non_conformal(ctx):
    with pytest.raises(ConfigError):
        get_method("rf_cp").build(ctx, {"train_on": "full", "n_trees": 5})
    get_method("rf_oob").build(ctx, {"train_on": "full", "n_trees": 5})


def test_unsafe_context_allows_training_rows_for_calibration(ctx):
    unsafe = MethodContext(fit=ctx.fit, tune=ctx.tune, cal=ctx.fit, full=ctx.fit, alpha=0.1, seed=0, unsafe=True)
    get_method("ridge_cp").build(unsafe, {})
    safe = MethodContext(fit=ctx.fit, tune=ctx.tune, cal=ctx.fit, full=ctx.fit, alpha=0.1, seed=0)
    with pytest.raises(CalibrationError, match="used for training"):
        get_method("ridge_cp").build(safe, {})


def test_gp_size_limit(ctx):
    with pytest.raises(BudgetExceededError):
        get_method("gp").build(ctx, {"max_n": 50})


def test_unknown_measure(ctx):
    with pytest.raises(ConfigError):
        get_method("qrf_cp").build(ctx, {"n_trees": 5, "measure": "bogus"})


def test_dropout_grid_default():
    assert method_registry.DROPOUT_GRID[0] == 0.05 and method_registry.DROPOUT_GRID[-1] == 0.5
