"""Adversarial training loop with cross-entropy or policy-gradient updates.

Per epoch: shuffle images and labels jointly, then for every batch
(the last one may be short) build adversarial inputs from the current
weights, take one loss/backward/RMSprop step.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .attacks import AttackConfig, fgsm, pgd_linf
from .data_io import Checkpoint, Dataset, load_checkpoint, save_checkpoint
from .errors import ConfigError
from .evaluation import MetricsRecord, adversarial_accuracy, natural_accuracy, read_metrics_csv, write_metrics_csv
from .network import Network, NetworkConfig, build_network
from .objectives import cross_entropy_loss, vpg_loss
from .optim import RMSprop, rmsprop_step
from .reward_env import RewardScheme, episode_step
from .tensor import Tensor, backward

log = logging.getLogger(__name__)

LOSS_MODES = ("ce", "rl")
ADV_MODES = ("none", "fgsm", "pgd")


@dataclass
class TrainConfig:
    epochs: int = 220
    batch_size: int = 32
    learning_rate: float = 1e-4
    decay: float = 1e-6
    loss_mode: str = "rl"
    adv_mode: str = "fgsm"
    attack: AttackConfig = field(default_factory=AttackConfig)
    checkpoint_every: int = 20
    seed: int = 0
    reward_scheme: RewardScheme = field(default_factory=RewardScheme)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    eval_epsilon: float = 8 / 255
    eval_batch_size: int = 256

    def validate(self, dataset_size: Optional[int] = None) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.adv_mode not in ADV_MODES:
            raise ConfigError(f"adv_mode must be one of {ADV_MODES}, got {self.adv_mode!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("epochs, batch_size and checkpoint_every must be positive")
        if self.learning_rate <= 0 or self.decay < 0:
            raise ConfigError("learning_rate must be positive and decay nonnegative")
        if dataset_size is not None and self.batch_size > dataset_size:
            raise ConfigError(f"batch size {self.batch_size} exceeds dataset size {dataset_size}")
        self.attack.validate()
        self.network.validate()

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "decay": self.decay,
            "loss_mode": self.loss_mode,
            "adv_mode": self.adv_mode,
            "attack": self.attack.to_dict(),
            "checkpoint_every": self.checkpoint_every,
            "seed": self.seed,
            "reward_scheme": self.reward_scheme.to_dict(),
            "network": self.network.to_dict(),
            "eval_epsilon": self.eval_epsilon,
            "eval_batch_size": self.eval_batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["attack"] = AttackConfig.from_dict(d["attack"])
        d["reward_scheme"] = RewardScheme.from_dict(d["reward_scheme"])
        d["network"] = NetworkConfig.from_dict(d["network"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class BatchEvent:
    """Handed to the per-batch callback before the optimizer step."""

    batch: int
    indices: np.ndarray
    inputs: np.ndarray
    x_adv: np.ndarray
    labels: np.ndarray
    loss: float


@dataclass
class EpochStats:
    loss: float
    batch_accuracy: float
    sampled_accuracy: float
    updates: int


def batch_slices(n: int, batch_size: int) -> list[slice]:
    """Consecutive batches covering ``n`` samples; the remainder forms a short final batch."""
    return [slice(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]


def make_adversarial(net: Network, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.adv_mode == "none":
        return x
    if cfg.adv_mode == "fgsm":
        return fgsm(net, x, y, cfg.attack)
    return pgd_linf(net, x, y, cfg.attack, rng)


def train_epoch(
    net: Network,
    dataset: Dataset,
    cfg: TrainConfig,
    state: RMSprop,
    rng: np.random.Generator,
    callback: Optional[Callable[[BatchEvent], None]] = None,
    reward_multiplier: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None,
) -> EpochStats:
    """One pass over ``dataset``: ``ceil(N / B)`` optimizer updates.

    ``reward_multiplier(indices, actions, labels)`` may return per-sample
    factors applied to RL rewards (reward shaping hook, off by default).
    """
    n = len(dataset)
    if n == 0:
        raise ConfigError("cannot train on an empty dataset")
    perm = rng.permutation(n)
    loss_sum = 0.0
    hits = sampled_hits = 0
    updates = 0
    for b, sl in enumerate(batch_slices(n, cfg.batch_size)):
        idx = perm[sl]
        xb, yb = dataset.images[idx], dataset.labels[idx]
        x_adv = make_adversarial(net, xb, yb, cfg, rng)

        net.zero_grad()
        probs = net.forward(Tensor(x_adv))
        if cfg.loss_mode == "ce":
            loss = cross_entropy_loss(probs, yb)
        else:
            actions, rewards = episode_step(net, x_adv, yb, cfg.reward_scheme, rng, probs=probs)
            if reward_multiplier is not None:
                rewards.rewards = rewards.rewards * np.asarray(reward_multiplier(idx, actions.actions, yb))
            loss = vpg_loss(probs, actions.actions, rewards)
            sampled_hits += int(np.sum(actions.actions == yb))
        if callback is not None:
            callback(BatchEvent(b, idx, xb, x_adv, yb, float(loss.data)))

        backward(loss)
        rmsprop_step(net.params, {k: p.grad for k, p in net.params.items() if p.grad is not None}, state)
        updates += 1
        loss_sum += float(loss.data) * len(idx)
        hits += int(np.sum(probs.data.argmax(axis=1) == yb))
    sampled = sampled_hits / n if cfg.loss_mode == "rl" else float("nan")
    return EpochStats(loss_sum / n, hits / n, sampled, updates)


@dataclass
class RunResult:
    net: Network
    state: RMSprop
    metrics: list[MetricsRecord]
    history: list[EpochStats]
    checkpoints: list[Path]


HISTORY_FIELDS = ["epoch", "loss", "batch_acc", "sampled_acc", "updates", "lr"]


def evaluate_checkpoint(net: Network, epoch: int, cfg: TrainConfig, train: Dataset, test: Dataset) -> MetricsRecord:
    fgsm_cfg = AttackConfig(epsilon=cfg.eval_epsilon, step_size=cfg.eval_epsilon, num_steps=1)
    return MetricsRecord(
        epoch=epoch,
        loss_mode=cfg.loss_mode,
        train_acc=natural_accuracy(net, train, cfg.eval_batch_size),
        test_acc=natural_accuracy(net, test, cfg.eval_batch_size),
        adv_fgsm_acc=adversarial_accuracy(net, test, "fgsm", fgsm_cfg, cfg.eval_batch_size),
    )


def make_checkpoint(net: Network, state: RMSprop, cfg: TrainConfig, epoch: int, rng: np.random.Generator) -> Checkpoint:
    return Checkpoint(
        epoch=epoch,
        network_config=net.config.to_dict(),
        params={k: v.copy() for k, v in net.state_arrays().items()},
        optimizer=state.to_dict(),
        optimizer_slots={k: v.copy() for k, v in state.slots.items()},
        train_config=cfg.to_dict(),
        config_digest=cfg.digest(),
        rng_state=rng.bit_generator.state,
    )


def restore(ckpt: Checkpoint) -> tuple[Network, RMSprop, np.random.Generator]:
    net = build_network(NetworkConfig.from_dict(ckpt.network_config), seed=0)
    net.load_arrays(ckpt.params)
    state = RMSprop.from_dict(ckpt.optimizer, ckpt.optimizer_slots)
    rng = np.random.default_rng()
    if ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
    return net, state, rng


def train(
    cfg: TrainConfig,
    train_set: Dataset,
    test_set: Dataset,
    out_dir,
    resume: Optional[Checkpoint] = None,
    callback: Optional[Callable[[BatchEvent], None]] = None,
) -> RunResult:
    """Run ``cfg.epochs`` epochs, checkpointing and measuring every ``checkpoint_every``.

    A checkpoint is also taken after the final epoch when it does not fall
    on the schedule.  Outputs in ``out_dir``: ``metrics.csv``,
    ``history.csv``, ``checkpoints/epoch_XXXX.rck``.
    """
    cfg.validate(len(train_set))
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    marker = out / "INCOMPLETE"
    marker.write_text("run in progress\n")

    if resume is None:
        net = build_network(cfg.network, seed=cfg.seed)
        state = RMSprop(cfg.learning_rate, cfg.decay)
        rng = np.random.default_rng(cfg.seed)
        start, metrics, history_rows = 0, [], []
    else:
        net, state, rng = restore(resume)
        start = resume.epoch
        metrics_path = out / "metrics.csv"
        metrics = [m for m in read_metrics_csv(metrics_path) if m.epoch <= start] if metrics_path.exists() else []
        history_rows = _read_history(out / "history.csv", start)

    history: list[EpochStats] = []
    checkpoints: list[Path] = []
    try:
        for epoch in range(start + 1, cfg.epochs + 1):
            lr = state.current_lr()
            stats = train_epoch(net, train_set, cfg, state, rng, callback)
            history.append(stats)
            history_rows.append([str(epoch), f"{stats.loss:.6f}", f"{stats.batch_accuracy:.6f}",
                                 f"{stats.sampled_accuracy:.6f}", str(stats.updates), f"{lr:.8g}"])
            _write_history(out / "history.csv", history_rows)
            log.info("epoch %d loss %.4f batch_acc %.4f", epoch, stats.loss, stats.batch_accuracy)
            if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                path = out / "checkpoints" / f"epoch_{epoch:04d}.rck"
                save_checkpoint(path, make_checkpoint(net, state, cfg, epoch, rng))
                checkpoints.append(path)
                record = evaluate_checkpoint(net, epoch, cfg, train_set, test_set)
                metrics.append(record)
                write_metrics_csv(out / "metrics.csv", metrics)
                log.info("checkpoint %d train %.4f test %.4f adv %.4f", epoch, record.train_acc,
                         record.test_acc, record.adv_fgsm_acc)
    except BaseException as exc:
        marker.write_text(f"run aborted: {type(exc).__name__}: {exc}\n")
        raise
    marker.unlink()
    return RunResult(net, state, metrics, history, checkpoints)


def _write_history(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        w.writerows(rows)


def _read_history(path: Path, upto: int) -> list[list[str]]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r for r in rows if int(r[0]) <= upto]


def resume_from(path, train_set: Dataset, test_set: Dataset, out_dir, epochs: Optional[int] = None) -> RunResult:
    """Continue a run from a checkpoint file, optionally extending ``epochs``."""
    ckpt = load_checkpoint(path)
    cfg = TrainConfig.from_dict(ckpt.train_config)
    if epochs is not None:
        cfg.epochs = epochs
    return train(cfg, train_set, test_set, out_dir, resume=ckpt)


def expected_updates(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
