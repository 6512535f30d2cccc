import math

import numpy as np
import pytest

from app.models.schemas import LossKind, LossTag
from app.services.nn import losses
from app.services.nn.losses import batch_objective


def _numeric_grad(loss: LossKind, out: np.ndarray, y: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(out)
    for idx in np.ndindex(out.shape):
        up, down = out.copy(), out.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (batch_objective(loss, up, y)[0] - batch_objective(loss, down, y)[0]) / (2 * h)
    return grad


def _batch_for(loss: LossKind, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    y = rng.normal(size=n)
    if loss.tag in (LossTag.QD, LossTag.LUBE):
        center = y + rng.normal(scale=0.5, size=n)
        half = rng.uniform(0.2, 1.5, size=n)
        return np.column_stack([center - half, center + half]), y
    return rng.normal(size=(n, loss.n_outputs)), y


LOSSES = {
    "mse": LossKind.mse(),
    "gauss_nll": LossKind.gauss_nll(),
    "pinball": LossKind.pinball(0.05, 0.5, 0.95),
    "qd_soft": LossKind(tag=LossTag.QD, alpha=0.1, lambda_qd=1.0, softness=5.0),
}


@pytest.mark.parametrize("seed", range(25))
@pytest.mark.parametrize("name", sorted(LOSSES))
def test_output_gradients_match_finite_differences(name, seed):
    loss = LOSSES[name]
    out, y = _batch_for(loss, seed)
    _, analytic = batch_objective(loss, out, y)
    np.testing.assert_allclose(analytic, _numeric_grad(loss, out, y), rtol=1e-4, atol=1e-5)


class TestPointLosses:
    def test_mse(self):
        assert losses.loss_mse(3.0, 1.0) == 4.0

    def test_gauss_nll_at_unit_variance(self):
        assert losses.loss_gauss_nll(0.0, 0.0, 1.0) == pytest.approx(0.5)
        assert losses.loss_gauss_nll(1.0, math.log(4.0), 1.0) == pytest.approx(math.log(2.0))

    def test_pinball_is_asymmetric(self):
        assert losses.loss_pinball(1.0, 3.0, 0.9) == pytest.approx(1.8)
        assert losses.loss_pinball(3.0, 1.0, 0.9) == pytest.approx(0.2)
        assert losses.loss_pinball(2.0, 2.0, 0.3) == 0.0

    def test_pinball_median_is_half_absolute_error(self, rng):
        q, y = rng.normal(size=20), rng.normal(size=20)
        np.testing.assert_allclose(losses.loss_pinball(q, y, 0.5), 0.5 * np.abs(q - y))


class TestIntervalLosses:
    def test_qd_hard_without_shortfall_is_captured_width(self):
        value = losses.loss_qd([0.0, 0.0], [1.0, 2.0], [0.5, 3.0], alpha=0.5, lambda_qd=15.0, softness=160.0, hard=True)
        assert value == pytest.approx(1.0)

    def test_qd_hard_penalizes_shortfall(self):
        value = losses.loss_qd([0.0, 0.0], [1.0, 2.0], [0.5, 3.0], alpha=0.1, lambda_qd=15.0, softness=160.0, hard=True)
        assert value == pytest.approx(1.0 + 15.0 * 2 / 0.09 * 0.4**2)

    def test_qd_with_nothing_captured_has_zero_width_term(self):
        value = losses.loss_qd([0.0], [1.0], [5.0], alpha=0.5, lambda_qd=1.0, softness=160.0, hard=True)
        assert value == pytest.approx(1.0 / 0.25 * 0.25)

    def test_lube_hard(self):
        value = losses.loss_lube([0.0, 0.0], [1.0, 3.0], [0.5, 5.0], alpha=0.1, lambda_lube=10.0, target_range=2.0)
        assert value == pytest.approx(1.0 + math.exp(4.0))

    def test_lube_without_shortfall(self):
        value = losses.loss_lube([0.0, 0.0], [1.0, 3.0], [0.5, 1.0], alpha=0.1, lambda_lube=10.0, target_range=2.0)
        assert value == pytest.approx(2.0)

    def test_soft_qd_approaches_hard_qd(self, rng):
        l = rng.uniform(-1, 0, size=40)
        u = l + rng.uniform(0.5, 2.0, size=40)
        # every target at least 0.1 away from both endpoints
        inside = rng.uniform(l + 0.1, u - 0.1)
        outside = np.where(rng.random(40) < 0.5, l - rng.uniform(0.1, 1.0, size=40), u + rng.uniform(0.1, 1.0, size=40))
        y = np.where(np.arange(40) < 30, inside, outside)
        hard = losses.loss_qd(l, u, y, 0.1, 15.0, 1.0, hard=True)
        gaps = [abs(losses.loss_qd(l, u, y, 0.1, 15.0, s) - hard) for s in (10.0, 100.0, 1e3, 1e4)]
        assert gaps[-1] < 1e-6
        assert gaps == sorted(gaps, reverse=True)

    def test_empty_or_ragged_batches_are_rejected(self):

        with pytest.raises(ValueError):
            losses.loss_qd([], [], [], 0.1, 1.0, 5.0)
        with pytest.raises(ValueError):
            losses.loss_qd([0.0], [1.0, 2.0], [0.5], 0.1, 1.0, 5.0)


class TestBatchObjective:
    def test_point_losses_are_summed(self, rng):
        out, y = rng.normal(size=(5, 1)), rng.normal(size=5)
        value, _ = batch_objective(LossKind.mse(), out, y)
        assert value == pytest.approx(float(np.sum((out[:, 0] - y) ** 2)))
        assert losses.mean_objective(LossKind.mse(), out, y) == pytest.approx(value / 5)

    def test_output_width_must_match_loss(self, rng):
        with pytest.raises(ValueError):
            batch_objective(LossKind.gauss_nll(), rng.normal(size=(4, 1)), rng.normal(size=4))

    def test_pinball_levels_are_validated(self):
        with pytest.raises(ValueError):
            LossKind.pinball(0.0, 0.5)
        with pytest.raises(ValueError):
            LossKind(tag=LossTag.PINBALL)
