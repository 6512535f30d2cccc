import numpy as np
import pytest

from app.errors import DataError, EmptySubensembleError
from app.models.schemas import ForestConfig
from app.services import forest_service
from app.services.forest_service import Oob
from tests.conftest import make_dataset


@pytest.fixture
def forest(linear_ds):
    return forest_service.fit_forest(linear_ds, ForestConfig(n_trees=20, seed=4))


class TestFit:
    def test_bootstrap_bookkeeping(self, forest, linear_ds):
        assert forest.inbag.shape == (20, linear_ds.n)
        np.testing.assert_array_equal(forest.inbag.sum(axis=1), linear_ds.n)
        assert forest.train_leaf.shape == (20, linear_ds.n)

    def test_same_seed_same_forest(self, linear_ds, forest):
        again = forest_service.fit_forest(linear_ds, ForestConfig(n_trees=20, seed=4))
        np.testing.assert_array_equal(again.inbag, forest.inbag)
        np.testing.assert_array_equal(
            forest_service.predict_batch(again, linear_ds.features[:10]),
            forest_service.predict_batch(forest, linear_ds.features[:10]),
        )

    def test_threaded_fit_matches_serial(self, linear_ds, forest):
        threaded = forest_service.fit_forest(linear_ds, ForestConfig(n_trees=20, seed=4, max_workers=4))
        np.testing.assert_array_equal(threaded.inbag, forest.inbag)

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            forest_service.fit_forest(make_dataset([[0.0]], [1.0]), ForestConfig())

    def test_features_per_split_bounded_by_width(self, linear_ds):
        with pytest.raises(ValueError):
            forest_service.fit_forest(linear_ds, ForestConfig(features_per_split=3))


class TestPredict:
    def test_full_prediction_is_tree_average(self, forest, linear_ds):
        x = linear_ds.features[0]
        manual = np.mean([tree.predict(x.reshape(1, -1))[0] for tree in forest.trees])
        assert forest_service.predict(forest, x) == pytest.approx(manual)

    def test_oob_prediction_averages_trees_that_skipped_the_row(self, forest, linear_ds):
        preds, valid = forest_service.oob_predictions(forest, linear_ds)
        i = int(np.flatnonzero(valid)[0])
        keep = forest.inbag[:, i] == 0
        per_tree = forest_service.tree_predictions(forest, linear_ds.features[i])[:, 0]
        assert preds[i] == pytest.approx(per_tree[keep].mean())
        assert forest_service.predict(forest, linear_ds.features[i], Oob(i)) == pytest.approx(preds[i])

    def test_empty_subensemble(self, linear_ds):
        single = forest_service.fit_forest(linear_ds, ForestConfig(n_trees=1, seed=0))
        seen = int(np.flatnonzero(single.inbag[0] > 0)[0])
        with pytest.raises(EmptySubensembleError) as err:
            forest_service.predict(single, linear_ds.features[seen], Oob(seen))
        assert err.value.index == seen
        _, valid = forest_service.oob_predictions(single, linear_ds)
        assert not valid[seen]
        assert forest_service.oob_residuals(single, linear_ds).shape == (int(valid.sum()),)

    def test_unknown_mode(self, forest, linear_ds):
        with pytest.raises(ValueError):
            forest_service.predict(forest, linear_ds.features[0], "oob")
        with pytest.raises(ValueError):
            forest_service.predict(forest, linear_ds.features[0], Oob(10_000))


class TestQuantileForest:
    @pytest.fixture
    def stump(self, rng):
        y = rng.normal(size=16)
        ds = make_dataset(rng.uniform(size=(16, 1)), y)
        return forest_service.fit_forest(ds, ForestConfig(n_trees=5, max_depth=0, seed=1)), y

    @pytest.mark.parametrize("beta", [0.05, 0.25, 0.5, 0.75, 0.95])
    def test_single_leaf_matches_empirical_quantile(self, stump, beta):
        forest, y = stump
        expected = np.quantile(y, beta, method="inverted_cdf")
        assert forest_service.qrf_quantile(forest, np.array([0.5]), beta) == expected

    def test_weights_sum_to_one(self, forest, linear_ds):
        w = forest_service.qrf_weights(forest, linear_ds.features[:5])
        np.testing.assert_allclose(w.sum(axis=1), 1.0)
        assert np.all(w >= 0)

    def test_cdf_is_monotone(self, forest, linear_ds):
        x = linear_ds.features[3]
        grid = np.linspace(linear_ds.targets.min() - 1, linear_ds.targets.max() + 1, 50)
        values = [forest_service.qrf_cdf(forest, x, g) for g in grid]
        assert np.all(np.diff(values) >= 0)
        assert values[0] == 0.0 and values[-1] == pytest.approx(1.0)

    def test_quantile_and_cdf_are_consistent(self, forest, linear_ds):
        x = linear_ds.features[7]
        for beta in (0.05, 0.2, 0.5, 0.8, 0.95):
            q = forest_service.qrf_quantile(forest, x, beta)
            assert forest_service.qrf_cdf(forest, x, q) >= beta - 1e-12
            below = np.nextafter(q, -np.inf)
            assert forest_service.qrf_cdf(forest, x, below) < beta + 1e-12

    def test_batch_quantiles_match_single(self, forest, linear_ds):
        x = linear_ds.features[:4]
        batch = forest_service.qrf_quantiles_batch(forest, x, (0.05, 0.95))
        for i in range(4):
            assert batch[i, 0] == forest_service.qrf_quantile(forest, x[i], 0.05)
            assert batch[i, 0] <= batch[i, 1]

    def test_beta_range(self, forest, linear_ds):
        with pytest.raises(ValueError):
            forest_service.qrf_quantile(forest, linear_ds.features[0], 1.0)
