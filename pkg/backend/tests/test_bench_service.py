import math

import pytest

from app.errors import ConfigError
from app.models.schemas import ExperimentConfig, ResultRow, RunStatus
from app.services import bench_service


def _config(**overrides) -> ExperimentConfig:
    raw = {
        "name": "tiny",
        "data": {"synthetic": {"kind": "linear_homoscedastic", "n": 160, "d": 1, "noise_scale": 0.3}},
        "methods": [
            {"name": "ridge_cp"},
            {"name": "rf_oob", "params": {"n_trees": 10}},
        ],
        "n_splits": 2,
        "alpha": 0.2,
    }
    raw.update(overrides)
    return ExperimentConfig.model_validate(raw)


def _without_timing(table):
    return [row.model_dump(exclude={"wall_ms"}) for row in table.rows]


class TestAggregate:
    def test_mean_and_population_std(self):
        rows = [
            ResultRow(method="m", split=0, coverage=0.8, mean_width=1.0),
            ResultRow(method="m", split=1, coverage=1.0, mean_width=3.0),
        ]
        (agg,) = bench_service.aggregate(rows)
        assert agg.coverage_mean == pytest.approx(0.9)
        assert agg.coverage_std == pytest.approx(0.1)
        assert agg.mean_width_mean == pytest.approx(2.0)
        assert agg.n_rows == 2 and agg.n_excluded == 0

    def test_sentinel_and_unbounded_rows_are_excluded(self):
        rows = [
            ResultRow(method="m", split=0, coverage=0.9, mean_width=1.0),
            ResultRow(method="m", split=1, status=RunStatus.OUT_OF_TIME),
            ResultRow(method="m", split=2, coverage=1.0, mean_width=math.inf),
        ]
        (agg,) = bench_service.aggregate(rows)
        assert agg.n_rows == 1 and agg.n_excluded == 2
        assert agg.coverage_mean == pytest.approx(0.9)
        assert agg.coverage_std == 0.0

    def test_all_rows_excluded(self):
        (agg,) = bench_service.aggregate([ResultRow(method="m", split=0, status=RunStatus.ERROR)])
        assert agg.coverage_mean is None and agg.n_excluded == 1


class TestClassify:
    def test_poor_r2_is_out_of_range(self):
        row = bench_service._classify(ResultRow(method="m", split=0, coverage=0.9, mean_width=1.0, r2=-3.0), 1.0)
        assert row.status == RunStatus.OUT_OF_RANGE.value

    def test_huge_width_is_out_of_range(self):
        row = bench_service._classify(ResultRow(method="m", split=0, coverage=1.0, mean_width=500.0), 1.0)
        assert row.status == RunStatus.OUT_OF_RANGE.value

    def test_reasonable_row_is_kept(self):
        row = bench_service._classify(ResultRow(method="m", split=0, coverage=0.9, mean_width=2.0, r2=0.5), 1.0)
        assert row.status == RunStatus.OK.value


class TestRun:
    def test_one_row_per_method_and_split(self):
        table = bench_service.run(_config())
        assert [(r.split, r.method) for r in table.rows] == [(0, "ridge_cp"), (0, "rf_oob"), (1, "ridge_cp"), (1, "rf_oob")]
        assert all(r.status == RunStatus.OK.value for r in table.rows)
        assert {a.method for a in table.aggregate} == {"ridge_cp", "rf_oob"}
        for row in table.rows:
            assert 0.0 <= row.coverage <= 1.0
            assert row.mean_width > 0

    def test_reruns_are_identical_apart_from_timing(self):
        assert _without_timing(bench_service.run(_config())) == _without_timing(bench_service.run(_config()))

    def test_threaded_run_matches_serial(self):
        assert _without_timing(bench_service.run(_config(max_workers=2))) == _without_timing(bench_service.run(_config()))

    def test_progress_reports_every_split(self):
        seen = []
        bench_service.run(_config(), progress=lambda done, total: seen.append((done, total)))
        assert seen == [(1, 2), (2, 2)]

    def test_unknown_method_fails_before_running(self):
        with pytest.raises(ConfigError):
            bench_service.run(_config(methods=[{"name": "svm"}]))

    def test_method_errors_become_rows(self):
        table = bench_service.run(_config(methods=[{"name": "ridge_cp", "params": {"train_on": "full"}}], n_splits=1))
        (row,) = table.rows
        assert row.status == RunStatus.ERROR.value
        assert "ConfigError" in row.detail

    def test_gp_over_size_limit_is_out_of_time(self):
        table = bench_service.run(_config(methods=[{"name": "gp", "params": {"max_n": 10}}], n_splits=1))
        assert table.rows[0].status == RunStatus.OUT_OF_TIME.value

    @pytest.mark.parametrize(
        "method",
        [
            {"name": "nn_cp", "params": {"epochs": 10_000_000}},
            {"name": "gp", "params": {"iters": 10_000_000}},
        ],
    )
    def test_budget_stops_long_fits_early(self, method):
        table = bench_service.run(_config(methods=[method], n_splits=1, time_budget_s=0.05))
        (row,) = table.rows
        assert row.status == RunStatus.OUT_OF_TIME.value
        assert row.wall_ms < 30_000

    def test_unsafe_calibration_runs(self):
        table = bench_service.run(_config(methods=[{"name": "ridge_cp"}], unsafe_train_calibration=True, n_splits=1))
        assert table.rows[0].status == RunStatus.OK.value

    def test_calibration_and_training_rows_are_disjoint(self):
        ctx, test = bench_service._split_data(_config(), bench_service.data_service.load_dataset(_config().data), 0)
        ids = set(ctx.fit.row_ids) | set(ctx.tune.row_ids)
        assert not ids & set(ctx.cal.row_ids)
        assert not ids & set(test.row_ids)
        assert ctx.full.n == ctx.fit.n + ctx.cal.n
