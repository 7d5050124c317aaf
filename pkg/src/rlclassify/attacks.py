"""White-box L-infinity attacks driven by cross-entropy input gradients."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .network import Network
from .objectives import cross_entropy_loss
from .tensor import Tensor, get_dtype, grad


def parse_fraction(text) -> float:
    """Parse ``"8/255"``, ``"0.03"`` or a number into a float."""
    if isinstance(text, (int, float)):
        return float(text)
    try:
        return float(Fraction(str(text).strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse {text!r} as a number or fraction") from exc


@dataclass
class AttackConfig:
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    num_steps: int = 5
    clip_min: float = 0.0
    clip_max: float = 1.0
    random_start: bool = False
    norm: str = "linf"

    def __post_init__(self):
        self.epsilon = parse_fraction(self.epsilon)
        self.step_size = parse_fraction(self.step_size)
        self.num_steps = int(self.num_steps)

    def validate(self) -> None:
        if self.norm != "linf":
            raise ConfigError("only the L-infinity norm is supported")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.step_size < 0:
            raise ConfigError("step_size must be nonnegative")
        if self.num_steps < 0:
            raise ConfigError("num_steps must be nonnegative")
        if self.clip_min >= self.clip_max:
            raise ConfigError("clip_min must be below clip_max")

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "step_size": self.step_size,
            "num_steps": self.num_steps,
            "clip_min": self.clip_min,
            "clip_max": self.clip_max,
            "random_start": self.random_start,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        return cls(**{k: d[k] for k in ("epsilon", "step_size", "num_steps", "clip_min", "clip_max", "random_start") if k in d})


def _as_array(images) -> np.ndarray:
    data = images.data if isinstance(images, Tensor) else images
    return np.asarray(data, dtype=get_dtype())


def input_gradient(net: Network, images: np.ndarray, labels) -> np.ndarray:
    """d CE / d input with the parameters frozen (their ``.grad`` is untouched)."""
    x = Tensor(images, requires_grad=True)
    loss = cross_entropy_loss(net.forward(x), labels)
    return grad(loss, [x])[0]


def ball_bounds(x: np.ndarray, cfg: AttackConfig) -> tuple[np.ndarray, np.ndarray]:
    """Largest representable box inside the epsilon-ball around ``x`` and the pixel range.

    Bounds are rounded toward ``x`` so that the perturbation never exceeds
    epsilon once measured exactly.
    """
    x64 = x.astype(np.float64)
    lo64 = np.maximum(x64 - cfg.epsilon, cfg.clip_min)
    hi64 = np.minimum(x64 + cfg.epsilon, cfg.clip_max)
    lo = lo64.astype(x.dtype)
    hi = hi64.astype(x.dtype)
    lo = np.where(lo.astype(np.float64) < lo64, np.nextafter(lo, x.dtype.type(np.inf)), lo)
    hi = np.where(hi.astype(np.float64) > hi64, np.nextafter(hi, x.dtype.type(-np.inf)), hi)
    return lo, hi


def _signed_step(net, x_cur, labels, step, lo, hi):
    g = input_gradient(net, x_cur, labels)
    stepped = x_cur + x_cur.dtype.type(step) * np.sign(g).astype(x_cur.dtype)
    return np.clip(stepped, lo, hi)


def fgsm(net: Network, images, labels, cfg: AttackConfig) -> np.ndarray:
    """``clip(x + eps * sign(grad_x CE))`` with sign(0) = 0."""
    cfg.validate()
    x = _as_array(images)
    lo, hi = ball_bounds(x, cfg)
    return _signed_step(net, x, labels, cfg.epsilon, lo, hi)


def pgd_linf(net: Network, images, labels, cfg: AttackConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Iterated sign-gradient ascent projected onto the epsilon-ball and pixel range.

    Starts from the clean image unless ``cfg.random_start`` is set, in which
    case a uniform point in the ball is drawn from ``rng``.
    """
    cfg.validate()
    x = _as_array(images)
    lo, hi = ball_bounds(x, cfg)
    x_adv = x.copy()
    if cfg.random_start and cfg.num_steps > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(x.dtype)
        x_adv = np.clip(x + noise, lo, hi)
    for _ in range(cfg.num_steps):
        x_adv = _signed_step(net, x_adv, labels, cfg.step_size, lo, hi)
    return x_adv


ATTACKS: dict[str, Callable] = {"fgsm": fgsm, "pgd": pgd_linf}


def worst_case_ensemble(
    net: Network,
    images,
    labels,
    members: Sequence[tuple[str, AttackConfig]],
) -> np.ndarray:
    """Per sample, the first member's image that is misclassified; otherwise the highest-CE one.

    This stands in for a full AutoAttack run with the attacks available here.
    """
    if not members:
        raise ConfigError("ensemble needs at least one member")
    x = _as_array(images)
    labels = np.asarray(labels)
    best = None
    best_loss = None
    fooled = np.zeros(len(x), dtype=bool)
    for name, cfg in members:
        if name not in ATTACKS:
            raise ConfigError(f"unknown attack {name!r}; choose from {sorted(ATTACKS)}")
        cand = ATTACKS[name](net, x, labels, cfg)
        probs = net.forward(Tensor(cand)).data
        wrong = probs.argmax(axis=1) != labels
        loss = -np.log(np.maximum(probs[np.arange(len(x)), labels].astype(np.float64), 1e-12))
        if best is None:
            best, best_loss = cand.copy(), loss
            fooled = wrong
            continue
        take_fool = wrong & ~fooled
        take_loss = ~wrong & ~fooled & (loss > best_loss)
        swap = take_fool | take_loss
        best[swap] = cand[swap]
        best_loss = np.where(swap, loss, best_loss)
        fooled = fooled | wrong
    return best
