"""Single-hidden-layer ReLU network d -> H -> k with forward and backward passes."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from app.utils import make_rng

HIDDEN_UNITS = 64

# Flat-vector layout: layer-major, weights before biases
PARAM_ORDER = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class NetParams:
    w1: np.ndarray  # (d, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, k)
    b2: np.ndarray  # (k,)
    dropout_prob: float = 0.0

    def __post_init__(self) -> None:
        arrays = {name: np.array(getattr(self, name), dtype=np.float64, copy=True) for name in PARAM_ORDER}
        d, h = arrays["w1"].shape
        if arrays["b1"].shape != (h,) or arrays["w2"].shape[0] != h or arrays["b2"].shape != (arrays["w2"].shape[1],):
            raise ValueError(
                "Inconsistent layer shapes: "
                + ", ".join(f"{k}={v.shape}" for k, v in arrays.items())
            )
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"Non-finite entries in {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_inputs(self) -> int:
        return int(self.w1.shape[0])

    @property
    def n_hidden(self) -> int:
        return int(self.w1.shape[1])

    @property
    def n_outputs(self) -> int:
        return int(self.w2.shape[1])

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def replace(self, **changes) -> "NetParams":
        values = {**self.arrays(), "dropout_prob": self.dropout_prob, **changes}
        return NetParams(**values)

    def weight_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays().values())))


def init_net(
    n_inputs: int,
    n_outputs: int,
    seed: int,
    *,
    hidden: int = HIDDEN_UNITS,
    dropout_prob: float = 0.0,
) -> NetParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    if n_inputs < 1 or n_outputs < 1:
        raise ValueError(f"Network needs at least one input and output, got {n_inputs} -> {n_outputs}")
    rng = make_rng(seed)
    b_in = 1.0 / np.sqrt(n_inputs)
    b_hid = 1.0 / np.sqrt(hidden)
    return NetParams(
        w1=rng.uniform(-b_in, b_in, size=(n_inputs, hidden)),
        b1=rng.uniform(-b_in, b_in, size=hidden),
        w2=rng.uniform(-b_hid, b_hid, size=(hidden, n_outputs)),
        b2=rng.uniform(-b_hid, b_hid, size=n_outputs),
        dropout_prob=dropout_prob,
    )


def dropout_mask(p: float, shape: Union[int, tuple[int, ...]], rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability p, 1/(1-p) otherwise."""
    if p <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def pass_mask(net: NetParams, seed: int) -> np.ndarray:
    """The (H,) mask used by one seeded inference pass; shared by every row of a batch."""
    return dropout_mask(net.dropout_prob, net.n_hidden, make_rng(seed))


@dataclass
class ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray  # hidden activations after dropout
    mask: Optional[np.ndarray]


def forward_batch(
    net: NetParams,
    x: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Outputs (n, k) for inputs (n, d); ``mask`` is (H,) or (n, H) or None."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.n_inputs:
        raise ValueError(f"Expected inputs of shape (n, {net.n_inputs}), got {x.shape}")
    z1 = x @ net.w1 + net.b1
    a1 = np.maximum(z1, 0.0)
    if mask is not None:
        a1 = a1 * mask
    out = a1 @ net.w2 + net.b2
    return out, ForwardCache(x=x, z1=z1, a1=a1, mask=mask)


def forward(net: NetParams, x: np.ndarray, dropout_active: bool = False, seed: int = 0) -> np.ndarray:
    """Output vector (k,) for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.n_inputs:
        raise ValueError(f"Expected a feature vector of length {net.n_inputs}, got shape {x.shape}")
    mask = pass_mask(net, seed) if dropout_active else None
    out, _ = forward_batch(net, x.reshape(1, -1), mask)
    return out[0]


def predict(net: NetParams, x: np.ndarray, dropout_active: bool = False, seed: int = 0) -> np.ndarray:
    """Batched ``forward``: row i gets exactly forward(net, x[i], dropout_active, seed)."""
    mask = pass_mask(net, seed) if dropout_active else None
    out, _ = forward_batch(net, x, mask)
    return out


def backward(net: NetParams, cache: ForwardCache, d_out: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of a scalar objective w.r.t. parameters and inputs, given dObjective/dOutputs."""
    dw2 = cache.a1.T @ d_out
    db2 = d_out.sum(axis=0)
    da1 = d_out @ net.w2.T
    if cache.mask is not None:
        da1 = da1 * cache.mask
    dz1 = da1 * (cache.z1 > 0)
    dw1 = cache.x.T @ dz1
    db1 = dz1.sum(axis=0)
    dx = dz1 @ net.w1.T
    return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}, dx


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def param_layout(net: NetParams) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, tuple(getattr(net, name).shape)) for name in PARAM_ORDER]


def flatten_params(net: NetParams) -> tuple[np.ndarray, list[tuple[str, tuple[int, ...]]]]:
    flat = np.concatenate([getattr(net, name).ravel() for name in PARAM_ORDER])
    return flat, param_layout(net)


def unflatten_params(
    flat: np.ndarray,
    layout: list[tuple[str, tuple[int, ...]]],
    dropout_prob: float = 0.0,
) -> NetParams:
    flat = np.asarray(flat, dtype=np.float64)
    expected = sum(int(np.prod(shape)) for _, shape in layout)
    if flat.shape != (expected,):
        raise ValueError(f"Flat vector has {flat.size} entries, layout needs {expected}")
    arrays, offset = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        arrays[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    return NetParams(**arrays, dropout_prob=dropout_prob)


def save_params(net: NetParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    flat, layout = flatten_params(net)
    np.savez(
        path,
        flat=flat,
        layout=np.array(json.dumps(layout)),
        dropout_prob=np.array(net.dropout_prob),
    )
    return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")


def load_params(path: Union[str, Path]) -> NetParams:
    with np.load(path) as data:
        layout = [(str(name), tuple(shape)) for name, shape in json.loads(str(data["layout"]))]
        return unflatten_params(data["flat"], layout, float(data["dropout_prob"]))
