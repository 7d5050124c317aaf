"""Training objectives over softmax outputs."""

from __future__ import annotations

import numpy as np

from . import ops
from .reward_env import RewardBatch
from .tensor import Tensor


def vpg_loss(probs: Tensor, actions, rewards) -> Tensor:
    """Policy-gradient loss ``sum_t -(1/B) log P(a_t|s_t) R_t``.

    Only the taken-action entries of ``probs`` receive gradient.  The 1/B
    weight is folded into the per-sample factors exactly as in
    :func:`cross_entropy_loss`, so rewards of +1 on the labels reproduce it bit for bit.
    """
    r = rewards.rewards if isinstance(rewards, RewardBatch) else rewards
    r = np.asarray(r, dtype=np.float64)
    chosen = ops.log(ops.take(probs, actions))
    return ops.tsum(ops.scale(chosen, -r / len(r)))


def cross_entropy_loss(probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true labels."""
    labels = np.asarray(labels)
    logp = ops.log(ops.take(probs, labels))
    return ops.tsum(ops.scale(logp, np.full(len(labels), -1.0 / len(labels))))
