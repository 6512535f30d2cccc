"""Ridge regression baseline used as a point predictor under conformal wrappers."""

import logging

from sklearn.linear_model import Ridge

from app.errors import DataError
from app.models.domain import Dataset

log = logging.getLogger(__name__)


def fit_ridge(ds: Dataset, l2: float = 1.0) -> Ridge:
    if ds.n < 2:
        raise DataError(f"Ridge needs at least 2 training rows, got {ds.n}")
    if l2 < 0:
        raise ValueError(f"l2 must be non-negative, got {l2}")
    model = Ridge(alpha=l2)
    model.fit(ds.features, ds.targets)
    log.debug("Fitted ridge: n=%d d=%d l2=%g", ds.n, ds.d, l2)
    return model
