"""RMSprop with per-update learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError


@dataclass
class RMSprop:
    """Optimizer state: one running mean of squared gradients per parameter.

    The learning rate at update ``t`` (counting from zero) is
    ``learning_rate / (1 + decay * t)``.
    """

    learning_rate: float = 1e-4
    decay: float = 1e-6
    rho: float = 0.9
    epsilon: float = 1e-7
    step: int = 0
    slots: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        return self.learning_rate / (1.0 + self.decay * self.step)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "decay": self.decay,
            "rho": self.rho,
            "epsilon": self.epsilon,
            "step": self.step,
        }

    @classmethod
    def from_dict(cls, d: dict, slots: dict[str, np.ndarray]) -> "RMSprop":
        return cls(d["learning_rate"], d["decay"], d["rho"], d["epsilon"], int(d["step"]), dict(slots))


def rmsprop_step(params: dict, grads: dict[str, np.ndarray], state: RMSprop) -> None:
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array).

    Parameters without an entry in ``grads`` are treated as having zero gradient.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"gradient of {name!r} has {bad} non-finite entries at update {state.step}")
    lr = state.current_lr()
    for name, p in params.items():
        dtype = p.data.dtype.type
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        v = state.slots.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        elif v.shape != p.shape:
            raise ValueError(f"optimizer slot {name!r} has shape {v.shape}, parameter has {p.shape}")
        v = dtype(state.rho) * v + dtype(1.0 - state.rho) * g * g
        p.data = p.data - dtype(lr) * g / (np.sqrt(v) + dtype(state.epsilon))
        state.slots[name] = v
    state.step += 1
