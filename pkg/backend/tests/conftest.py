import numpy as np
import pytest

from app.config import reset_settings
from app.models.domain import Dataset
from app.models.schemas import SyntheticKind, SyntheticSpec
from app.services.data_service import gen_synthetic
from app.services.run_registry import reset_run_registry


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """Fresh settings and run registry per test; results go to a temp dir."""
    monkeypatch.setenv("RESULTS_DIR", str(tmp_path / "results"))
    reset_settings()
    reset_run_registry()
    yield
    reset_settings()
    reset_run_registry()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def linear_ds() -> Dataset:
    return gen_synthetic(SyntheticSpec(kind=SyntheticKind.LINEAR_HOMOSCEDASTIC, n=200, d=2, noise_scale=0.3), seed=1)


@pytest.fixture
def sine_ds() -> Dataset:
    return gen_synthetic(SyntheticSpec(kind=SyntheticKind.SINE_HETEROSCEDASTIC, n=400, d=1, noise_scale=0.3), seed=2)


def make_dataset(x, y) -> Dataset:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return Dataset(features=x, targets=np.asarray(y, dtype=np.float64))
