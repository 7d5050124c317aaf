"""VGG-style classifier: conv blocks, dense head, layer norm, softmax."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, get_dtype


@dataclass
class NetworkConfig:
    """Architecture description.

    ``conv_blocks`` holds ``(num_conv_layers, channels)`` pairs; each block is
    followed by a 2x2 max pool.  ``dense_units`` are the hidden widths of the
    head, which always ends in ``num_classes`` units, layer norm and softmax.
    """

    conv_blocks: list[tuple[int, int]] = field(default_factory=lambda: [(2, 32), (2, 64), (2, 128)])
    dense_units: list[int] = field(default_factory=lambda: [256])
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (32, 32, 3)

    def __post_init__(self):
        self.conv_blocks = [(int(n), int(c)) for n, c in self.conv_blocks]
        self.dense_units = [int(u) for u in self.dense_units]
        self.input_shape = tuple(int(v) for v in self.input_shape)

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        h, w, c = self.input_shape
        if min(h, w, c) < 1:
            raise ConfigError(f"bad input shape {self.input_shape}")
        for i, (n, ch) in enumerate(self.conv_blocks):
            if n < 1 or ch < 1:
                raise ConfigError(f"conv block {i} needs positive layer count and width, got {(n, ch)}")
            if h % 2 or w % 2:
                raise ConfigError(f"pool after block {i} cannot halve a {h}x{w} map")
            h, w = h // 2, w // 2
        if any(u < 1 for u in self.dense_units):
            raise ConfigError("dense widths must be positive")

    def feature_shape(self) -> tuple[int, int, int]:
        h, w, c = self.input_shape
        for _, ch in self.conv_blocks:
            h, w, c = h // 2, w // 2, ch
        return h, w, c

    def param_count(self) -> int:
        """Closed-form number of scalar parameters."""
        total, cin = 0, self.input_shape[2]
        for n, ch in self.conv_blocks:
            for _ in range(n):
                total += 9 * cin * ch + ch
                cin = ch
        h, w, c = self.feature_shape()
        width = h * w * c
        for units in self.dense_units + [self.num_classes]:
            total += width * units + units
            width = units
        return total + 2 * self.num_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            conv_blocks=[tuple(b) for b in d["conv_blocks"]],
            dense_units=list(d["dense_units"]),
            num_classes=int(d["num_classes"]),
            input_shape=tuple(d["input_shape"]),
        )


@dataclass
class ActionBatch:
    actions: np.ndarray
    log_probs: np.ndarray


class Network:
    """Parameters live in ``self.params`` (insertion ordered); forward is stateless."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)

        def he_uniform(shape, fan_in):
            limit = np.sqrt(6.0 / fan_in)
            return rng.uniform(-limit, limit, size=shape)

        cin = config.input_shape[2]
        for bi, (n, ch) in enumerate(config.conv_blocks):
            for li in range(n):
                name = f"conv{bi}_{li}"
                self._add(f"{name}.kernel", he_uniform((3, 3, cin, ch), 9 * cin))
                self._add(f"{name}.bias", np.zeros(ch))
                cin = ch
        h, w, c = config.feature_shape()
        width = h * w * c
        for i, units in enumerate(config.dense_units + [config.num_classes]):
            self._add(f"dense{i}.weight", he_uniform((width, units), width))
            self._add(f"dense{i}.bias", np.zeros(units))
            width = units
        self._add("norm.gain", np.ones(config.num_classes))
        self._add("norm.shift", np.zeros(config.num_classes))

    def _add(self, name: str, values: np.ndarray) -> None:
        self.params[name] = Tensor(values, requires_grad=True, name=name)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ShapeError("parameter names do not match the network layout")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ShapeError(f"{k}: expected {p.shape}, got {arrays[k].shape}")
            p.data = np.array(arrays[k], dtype=p.data.dtype)

    def forward(self, images: Tensor) -> Tensor:
        """Map ``[B,H,W,C]`` images to ``[B,K]`` class probabilities."""
        if images.data.ndim != 4 or images.shape[1:] != self.config.input_shape:
            raise ShapeError(f"expected images [B,{','.join(map(str, self.config.input_shape))}], got {images.shape}")
        p = self.params
        x = images
        for bi, (n, _) in enumerate(self.config.conv_blocks):
            for li in range(n):
                name = f"conv{bi}_{li}"
                x = ops.relu(ops.conv2d(x, p[f"{name}.kernel"], p[f"{name}.bias"]))
            x = ops.max_pool2x2(x)
        x = ops.flatten(x)
        last = len(self.config.dense_units)
        for i in range(last + 1):
            x = ops.dense(x, p[f"dense{i}.weight"], p[f"dense{i}.bias"])
            if i < last:
                x = ops.relu(x)
        x = ops.layer_norm(x, p["norm.gain"], p["norm.shift"])
        return ops.softmax(x)

    __call__ = forward


def build_network(config: Optional[NetworkConfig] = None, seed: int = 0) -> Network:
    return Network(config or NetworkConfig(), seed)


def as_tensor(images) -> Tensor:
    return images if isinstance(images, Tensor) else Tensor(images)


def predict_probs(net: Network, images, batch_size: Optional[int] = None) -> np.ndarray:
    """Class probabilities as a plain array; ``batch_size`` bounds memory for large sets."""
    data = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=get_dtype())
    if batch_size is None or len(data) <= batch_size:
        return net.forward(Tensor(data)).data
    return np.concatenate([net.forward(Tensor(data[i:i + batch_size])).data for i in range(0, len(data), batch_size)])


def predict_classes(net: Network, images, batch_size: Optional[int] = 256) -> np.ndarray:
    # argmax already resolves ties to the lowest index
    return predict_probs(net, images, batch_size).argmax(axis=1)


def sample_actions(probs, rng: np.random.Generator, tol: float = 1e-4) -> ActionBatch:
    """Draw one class per row from the categorical distribution in that row."""
    p = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"expected [B,K] probabilities, got {p.shape}")
    sums = p.sum(axis=1)
    if np.any(p < 0) or np.any(np.abs(sums - 1.0) > tol):
        raise ContractError("probability rows must be nonnegative and sum to 1")
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cdf[:, -1]
    actions = (cdf <= u[:, None]).sum(axis=1)
    actions = np.minimum(actions, p.shape[1] - 1)
    chosen = p[np.arange(len(p)), actions]
    return ActionBatch(actions=actions.astype(np.int64), log_probs=np.log(chosen))
