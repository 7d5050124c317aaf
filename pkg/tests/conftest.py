import numpy as np
import pytest

from rlclassify import ops
from rlclassify.network import NetworkConfig, build_network
from rlclassify.tensor import Tensor


def central_difference(f, arr: np.ndarray, coords, h: float) -> np.ndarray:
    """Numerical d f / d arr at flat ``coords``; ``arr`` is perturbed in place and restored."""
    flat = arr.reshape(-1)
    out = []
    for c in coords:
        orig = flat[c]
        flat[c] = orig + h
        fp = float(f())
        flat[c] = orig - h
        fm = float(f())
        flat[c] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def close_enough(analytic, numeric, rel=1e-3, abs_=1e-4) -> np.ndarray:
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) <= np.maximum(rel * np.maximum(np.abs(analytic), np.abs(numeric)), abs_)


def _away_from_zero(a, margin=0.05):
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin, a)


def fd_cases(r) -> dict:
    """Small float64 inputs and a closure for every differentiable primitive."""
    x4 = r.uniform(-1, 1, (2, 4, 4, 3))
    k = r.uniform(-1, 1, (3, 3, 3, 2))
    b = r.uniform(-1, 1, 2)
    cases = {
        "conv2d": ((x4, k, b), lambda x, k, b: ops.conv2d(x, k, b)),
        "max_pool2x2": ((r.uniform(-1, 1, (2, 4, 4, 3)),), lambda x: ops.max_pool2x2(x)),
        "dense": ((r.uniform(-1, 1, (3, 5)), r.uniform(-1, 1, (5, 4)), r.uniform(-1, 1, 4)), ops.dense),
        "relu": ((_away_from_zero(r.uniform(-1, 1, (3, 5))),), ops.relu),
        "layer_norm": ((r.uniform(-1, 1, (3, 6)), r.uniform(-1, 1, 6), r.uniform(-1, 1, 6)), ops.layer_norm),
        "softmax": ((r.uniform(-1, 1, (3, 5)),), ops.softmax),
        "flatten": ((r.uniform(-1, 1, (2, 2, 2, 3)),), ops.flatten),
        "take+log": ((r.uniform(0.1, 1, (4, 3)),), lambda p: ops.log(ops.take(p, [0, 2, 1, 2]))),
        "scale": ((r.uniform(-1, 1, (3, 4)),), lambda x: ops.scale(x, np.linspace(-2, 2, 12).reshape(3, 4))),
        "mean": ((r.uniform(-1, 1, (3, 4)),), ops.mean),
    }
    return cases


FD_PRIMITIVES = ["conv2d", "max_pool2x2", "dense", "relu", "layer_norm", "softmax", "flatten",
                 "take+log", "scale", "mean"]


class LinearToy:
    """Two-class model on one pixel: logits = [0, w * x]."""

    def __init__(self, w: float):
        self.weight = Tensor([[0.0, w]])
        self.bias = Tensor([0.0, 0.0])

    def forward(self, images: Tensor) -> Tensor:
        return ops.softmax(ops.dense(ops.flatten(images), self.weight, self.bias))


SMALL = NetworkConfig(conv_blocks=[(1, 4), (1, 8)], dense_units=[16], num_classes=10, input_shape=(32, 32, 3))


@pytest.fixture
def small_net():
    return build_network(SMALL, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
