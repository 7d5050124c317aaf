"""Classification as a one-step episode: predict a class, receive a reward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .network import ActionBatch, Network, predict_probs, sample_actions


@dataclass
class RewardScheme:
    reward_correct: float = 1.0
    reward_wrong: float = -1.0
    per_class_scale: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.per_class_scale is not None:
            self.per_class_scale = [float(s) for s in self.per_class_scale]
            if any(s <= 0 for s in self.per_class_scale):
                raise ConfigError("per-class reward scales must be positive")

    def validate_signs(self) -> None:
        """Both-signed learning needs a positive and a negative reward."""
        if not self.reward_correct > 0 > self.reward_wrong:
            raise ConfigError(
                f"expected reward_correct > 0 > reward_wrong, got {self.reward_correct}, {self.reward_wrong}"
            )

    def to_dict(self) -> dict:
        return {
            "reward_correct": self.reward_correct,
            "reward_wrong": self.reward_wrong,
            "per_class_scale": None if self.per_class_scale is None else list(self.per_class_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardScheme":
        return cls(float(d["reward_correct"]), float(d["reward_wrong"]), d.get("per_class_scale"))


@dataclass
class RewardBatch:
    rewards: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


def assign_rewards(
    actions,
    labels,
    scheme: RewardScheme = RewardScheme(),
    num_classes: int = 10,
    multiplier=None,
) -> RewardBatch:
    """Reward each prediction: ``reward_correct`` on a hit, ``reward_wrong`` on a miss.

    Both magnitudes are multiplied by ``per_class_scale[label]`` when set.
    ``multiplier`` is an optional per-sample factor for trainer-side
    shaping (e.g. harsher penalties for repeatedly misclassified samples).
    """
    actions = np.asarray(actions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if actions.shape != labels.shape or actions.ndim != 1:
        raise InputError(f"actions {actions.shape} and labels {labels.shape} must be equal-length vectors")
    for name, arr in (("action", actions), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise InputError(f"{name} index outside [0, {num_classes})")
    rewards = np.where(actions == labels, scheme.reward_correct, scheme.reward_wrong).astype(np.float64)
    if scheme.per_class_scale is not None:
        scales = np.asarray(scheme.per_class_scale, dtype=np.float64)
        if len(scales) != num_classes:
            raise ConfigError(f"per_class_scale has {len(scales)} entries, expected {num_classes}")
        rewards = rewards * scales[labels]
    if multiplier is not None:
        rewards = rewards * np.asarray(multiplier, dtype=np.float64)
    return RewardBatch(rewards)


def episode_step(
    net: Network,
    images,
    labels,
    scheme: RewardScheme,
    rng: np.random.Generator,
    probs=None,
) -> tuple[ActionBatch, RewardBatch]:
    """Observe images, sample actions from the policy, and score them.

    Pass ``probs`` to reuse an existing forward pass (the trainer does, so
    the loss shares the graph that produced the sampled actions).
    """
    if probs is None:
        probs = predict_probs(net, images)
    actions = sample_actions(probs, rng)
    return actions, assign_rewards(actions.actions, labels, scheme, net.config.num_classes)
