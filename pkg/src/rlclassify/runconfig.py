"""Flat ``key = value`` run-configuration files.

Keys use dotted prefixes for the nested configs, e.g. ``attack.epsilon``
or ``network.conv_blocks``.  Fractions such as ``8/255`` are accepted for
every real-valued key.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .attacks import AttackConfig, parse_fraction
from .errors import ConfigError
from .network import NetworkConfig
from .reward_env import RewardScheme
from .trainer import TrainConfig

_INT_KEYS = {"epochs", "batch_size", "checkpoint_every", "seed", "eval_batch_size", "attack.num_steps", "network.num_classes"}
_REAL_KEYS = {
    "learning_rate", "decay", "eval_epsilon",
    "attack.epsilon", "attack.step_size", "attack.clip_min", "attack.clip_max",
    "reward.correct", "reward.wrong",
}
_STR_KEYS = {"loss_mode", "adv_mode", "data_dir"}


def _fmt_blocks(blocks) -> str:
    return ",".join(f"{n}x{c}" for n, c in blocks)


def _parse_blocks(text: str) -> list[tuple[int, int]]:
    try:
        return [tuple(int(v) for v in part.split("x")) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"conv blocks must look like '2x32,2x64', got {text!r}") from exc


def _fmt_list(values) -> str:
    return ",".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def to_flat(cfg: TrainConfig, data_dir: str = "") -> dict[str, str]:
    flat = {
        "epochs": str(cfg.epochs),
        "batch_size": str(cfg.batch_size),
        "learning_rate": repr(cfg.learning_rate),
        "decay": repr(cfg.decay),
        "loss_mode": cfg.loss_mode,
        "adv_mode": cfg.adv_mode,
        "checkpoint_every": str(cfg.checkpoint_every),
        "seed": str(cfg.seed),
        "eval_epsilon": repr(cfg.eval_epsilon),
        "eval_batch_size": str(cfg.eval_batch_size),
        "attack.epsilon": repr(cfg.attack.epsilon),
        "attack.step_size": repr(cfg.attack.step_size),
        "attack.num_steps": str(cfg.attack.num_steps),
        "attack.clip_min": repr(cfg.attack.clip_min),
        "attack.clip_max": repr(cfg.attack.clip_max),
        "attack.random_start": str(cfg.attack.random_start).lower(),
        "reward.correct": repr(cfg.reward_scheme.reward_correct),
        "reward.wrong": repr(cfg.reward_scheme.reward_wrong),
        "reward.per_class_scale": "" if cfg.reward_scheme.per_class_scale is None else _fmt_list(cfg.reward_scheme.per_class_scale),
        "network.conv_blocks": _fmt_blocks(cfg.network.conv_blocks),
        "network.dense_units": _fmt_list(cfg.network.dense_units),
        "network.num_classes": str(cfg.network.num_classes),
        "network.input_shape": _fmt_list(cfg.network.input_shape),
    }
    flat["data_dir"] = data_dir
    return flat


def dumps(cfg: TrainConfig, data_dir: str = "") -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(cfg, data_dir).items())


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def from_flat(flat: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Overlay ``flat`` onto ``base`` (defaults when omitted)."""
    cfg = base or TrainConfig()
    attack = AttackConfig(**cfg.attack.to_dict())
    reward = RewardScheme(**cfg.reward_scheme.to_dict())
    network = NetworkConfig.from_dict(cfg.network.to_dict())
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    known = _INT_KEYS | _REAL_KEYS | _STR_KEYS | {
        "attack.random_start", "reward.per_class_scale",
        "network.conv_blocks", "network.dense_units", "network.input_shape",
    }
    for key, raw in flat.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key in _INT_KEYS:
                val = int(raw)
            elif key in _REAL_KEYS:
                val = parse_fraction(raw)
            else:
                val = raw
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
        if key == "data_dir":
            continue
        if key.startswith("attack."):
            name = key.split(".", 1)[1]
            if name == "random_start":
                val = raw.lower() in ("1", "true", "yes")
            setattr(attack, name, val)
        elif key == "reward.correct":
            reward.reward_correct = val
        elif key == "reward.wrong":
            reward.reward_wrong = val
        elif key == "reward.per_class_scale":
            reward = RewardScheme(reward.reward_correct, reward.reward_wrong,
                                  [parse_fraction(v) for v in raw.split(",")] if raw else None)
        elif key == "network.conv_blocks":
            network.conv_blocks = _parse_blocks(raw)
        elif key == "network.dense_units":
            network.dense_units = [int(v) for v in raw.split(",") if v.strip()]
        elif key == "network.num_classes":
            network.num_classes = val
        elif key == "network.input_shape":
            network.input_shape = tuple(int(v) for v in raw.split(","))
        else:
            values[key] = val
    values.update(attack=attack, reward_scheme=reward, network=network)
    return TrainConfig(**values)


def load(path) -> dict[str, str]:
    return parse_text(Path(path).read_text())
