"""End-to-end behavior on synthetic data. Slow: select with ``pytest -m slow``."""

import numpy as np
import pytest
from scipy.stats import spearmanr

from app.models.domain import IntervalEstimator
from app.models.schemas import ExperimentConfig, ForestConfig, LossKind, SyntheticKind, SyntheticSpec, TrainConfig
from app.services import bench_service, conformal_service, forest_service, interval_service
from app.services.data_service import gen_synthetic
from app.services.nn import trainer
from app.services.nn.network import init_net
from tests.conftest import make_dataset

pytestmark = pytest.mark.slow


def _config(methods, **overrides) -> ExperimentConfig:
    raw = {
        "name": "acceptance",
        "data": {"synthetic": {"kind": "sine_heteroscedastic", "n": 2000, "d": 1, "noise_scale": 0.3}},
        "methods": methods,
        "n_splits": 50,
        "alpha": 0.1,
    }
    raw.update(overrides)
    return ExperimentConfig.model_validate(raw)


def test_conformal_wrappers_are_marginally_valid():
    methods = [
        {"name": "nn_cp", "params": {"epochs": 30, "learning_rate": 1e-2}},
        {"name": "nn_norm_cp", "params": {"epochs": 30, "learning_rate": 1e-2, "mc_samples": 20}},
        {"name": "ridge_cp"},
        {"name": "rf_cp", "params": {"n_trees": 50}},
        {"name": "qrf_cp", "params": {"n_trees": 50, "min_leaf": 5}},
        {"name": "rf_oob_cp", "params": {"n_trees": 50}},
    ]
    table = bench_service.run(_config(methods))
    for agg in table.aggregate:
        assert agg.n_excluded == 0, agg.method
        assert 0.88 <= agg.coverage_mean <= 0.93, agg.method


NET = {"epochs": 30, "learning_rate": 5e-3, "mc_samples": 20}


def test_network_and_gp_conformal_variants_are_marginally_valid():
    methods = [
        {"name": "qr_cp", "params": NET},
        {"name": "qd_cp", "params": NET},
        {"name": "drop_cp", "params": {**NET, "dropout_prob": 0.1}},
        {"name": "mve_cp", "params": NET},
        {"name": "de_cp", "params": {**NET, "members": 3}},
        {"name": "gp_cp", "params": {"iters": 20}},
    ]
    table = bench_service.run(_config(methods, n_splits=20))
    assert {agg.method for agg in table.aggregate} == {m["name"] for m in methods}
    for agg in table.aggregate:
        assert agg.n_excluded == 0, agg.method
        assert 0.88 <= agg.coverage_mean <= 0.93, agg.method


def test_gp_intervals_cover_nominally_on_homoscedastic_data():
    data = {"synthetic": {"kind": "linear_homoscedastic", "n": 600, "d": 1, "noise_scale": 0.3}}
    table = bench_service.run(_config([{"name": "gp", "params": {"iters": 50}}], data=data, n_splits=20))
    agg = table.aggregate_for("gp")
    assert agg.n_excluded == 0
    assert 0.87 <= agg.coverage_mean <= 0.93



def test_coverage_spread_contracts_with_calibration_size():
    rng = np.random.default_rng(0)
    point = lambda v: 2.0 * v[:, 0]  # noqa: E731
    stds = []
    for n_cal in (50, 500, 5000):
        rates = []
        for _ in range(200):
            x = rng.uniform(-1, 1, size=(n_cal + 200, 1))
            y = point(x) + rng.normal(scale=0.3, size=x.shape[0])
            cal, test = make_dataset(x[:n_cal], y[:n_cal]), make_dataset(x[n_cal:], y[n_cal:])
            lo, hi = conformal_service.conformalize_point(point, cal, 0.1).predict_intervals(test.features)
            rates.append(np.mean((lo <= test.targets) & (test.targets <= hi)))
        stds.append(np.std(rates))
    assert stds[0] > stds[1] > stds[2]


def test_plain_dropout_undercovers():
    table = bench_service.run(
        _config([{"name": "drop", "params": {"dropout_prob": 0.1, "epochs": 100, "learning_rate": 1e-2}}], n_splits=10)
    )
    assert table.aggregate_for("drop").coverage_mean < 0.85


def test_calibrating_on_training_data_degrades_coverage():
    methods = [{"name": "rf_cp", "params": {"n_trees": 50, "min_leaf": 1}}]
    safe = bench_service.run(_config(methods, n_splits=10)).aggregate_for("rf_cp")
    unsafe = bench_service.run(_config(methods, n_splits=10, unsafe_train_calibration=True)).aggregate_for("rf_cp")
    assert unsafe.coverage_mean <= safe.coverage_mean - 0.02


def test_larger_training_share_does_not_widen_intervals():
    methods = [{"name": "rf_cp", "params": {"n_trees": 50}}]
    even = bench_service.run(_config(methods, cal_frac=0.5)).aggregate_for("rf_cp")
    skewed = bench_service.run(_config(methods, cal_frac=0.25)).aggregate_for("rf_cp")
    assert skewed.mean_width_mean <= 1.01 * even.mean_width_mean
    assert abs(skewed.coverage_mean - 0.9) <= 0.02


def test_closed_forms_match_grid_scan_on_random_configurations():
    rng = np.random.default_rng(11)
    for _ in range(100):
        slope, offset = rng.normal(size=2)
        point = lambda v, s=slope, o=offset: s * v[:, 0] + o  # noqa: E731
        sigma = lambda v: 0.2 + np.abs(v[:, 0])  # noqa: E731
        base = IntervalEstimator(
            method="base", alpha=0.1, bounds=lambda v, p=point: (p(v) - 0.3, p(v) + 0.1)
        )
        x = rng.uniform(-1, 1, size=(int(rng.integers(20, 200)), 1))
        cal = make_dataset(x, point(x) + rng.normal(scale=0.5, size=x.shape[0]))
        alpha = float(rng.uniform(0.05, 0.3))
        query = rng.uniform(-1, 1, size=(1, 1))
        for measure in (
            conformal_service.point_measure(point),
            conformal_service.normalized_measure(point, sigma),
            conformal_service.interval_measure(base),
        ):
            record = conformal_service.calibrate(measure, cal, alpha)
            if not np.isfinite(record.critical):
                continue
            lo, hi = measure.region(query, record.critical)
            span = max(float(hi[0] - lo[0]), 1e-6)
            step = 1e-3 * span
            grid = np.arange(lo[0] - span, hi[0] + span, step)
            scanned = conformal_service.icp_region(measure, record, query[0], grid)
            assert abs(scanned.lower - lo[0]) <= step and abs(scanned.upper - hi[0]) <= step


def test_qrf_cdf_is_monotone_and_consistent_on_many_queries(linear_ds):
    forest = forest_service.fit_forest(linear_ds, ForestConfig(n_trees=20, min_leaf=3, seed=2))
    x = linear_ds.features[11]
    w = forest_service.qrf_weights(forest, x)[0]
    support, cum = forest_service._weighted_cdf_table(forest, w)
    queries = np.sort(np.random.default_rng(0).uniform(support[0] - 1, support[-1] + 1, 10_000))
    cdf = np.array([forest_service.qrf_cdf(forest, x, y) for y in queries])
    assert np.all(np.diff(cdf) >= 0)
    for beta in (0.05, 0.2, 0.5, 0.8, 0.95):
        q = forest_service.qrf_quantile(forest, x, beta)
        # F(y) >= beta  <=>  q <= y
        np.testing.assert_array_equal(cdf >= beta, q <= queries)


def test_oob_shift_equals_conformal_interval_on_symmetrized_errors():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(400, 1))
    ds = make_dataset(x, np.sin(3 * x[:, 0]) + rng.normal(scale=0.2, size=400))
    forest = forest_service.fit_forest(ds, ForestConfig(n_trees=50, seed=0))
    errors = forest_service.oob_residuals(forest, ds)[:150]
    symmetric = np.concatenate([errors, -errors])

    lo_shift, hi_shift = interval_service.oob_error_shifts(symmetric, 0.1)
    record = conformal_service.record_from_scores(np.abs(symmetric), 0.1)
    queries = rng.uniform(-1, 1, size=(50, 1))
    center = forest_service.predict_batch(forest, queries)
    lo, hi = conformal_service.oob_measure(forest).region(queries, record.critical)
    np.testing.assert_allclose(lo, center + lo_shift, atol=1e-12)
    np.testing.assert_allclose(hi, center + hi_shift, atol=1e-12)


def test_quantile_width_tracks_the_noise_scale():
    data = gen_synthetic(SyntheticSpec(kind=SyntheticKind.SINE_HETEROSCEDASTIC, n=3000, d=1, noise_scale=0.5), seed=4)
    fit_rows, test_rows = np.arange(2000), np.arange(2000, 3000)
    loss = LossKind.pinball(*interval_service.qr_levels(0.1))
    net = trainer.train(
        init_net(1, 2, seed=0),
        data.subset(fit_rows),
        None,
        TrainConfig(learning_rate=1e-2, epochs=300, seed=0),
        loss,
    )
    x = data.features[test_rows]
    lo, hi = interval_service.qr_estimator(net, 0.1).predict_intervals(x)
    rho, _ = spearmanr(hi - lo, 1.0 + np.abs(x[:, 0]))
    assert rho > 0.5
