"""Multi-seed CE vs RL comparison of generalization gap and FGSM accuracy.

Runs FGSM adversarial training for both loss modes and several seeds on
the same data, then summarizes each run's train/test gap per checkpoint.
Usage::

    python -m rlclassify.study --data DIR --out study/ [--subset 10000 --epochs 30]
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data_io import Dataset, load_cifar10
from .evaluation import GAP_THRESHOLD, MetricsRecord
from .trainer import TrainConfig, train


@dataclass
class TrendReport:
    seeds: list[int]
    runs: dict[tuple[str, int], list[MetricsRecord]] = field(default_factory=dict)

    def mean_gap(self, loss_mode: str, seed: int) -> float:
        return float(np.mean([r.gap for r in self.runs[(loss_mode, seed)]]))

    def share_under_threshold(self, loss_mode: str, seed: int, threshold: float = GAP_THRESHOLD) -> float:
        """Fraction of checkpoints whose gap is below ``threshold``."""
        return float(np.mean([r.gap < threshold for r in self.runs[(loss_mode, seed)]]))

    def seeds_rl_not_worse(self) -> int:
        """Number of seeds where the mean RL gap does not exceed the mean CE gap."""
        return sum(self.mean_gap("rl", s) <= self.mean_gap("ce", s) for s in self.seeds)

    def trend_holds(self) -> bool:
        return self.seeds_rl_not_worse() >= (2 * len(self.seeds) + 2) // 3

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "loss_mode", "epoch", "train_acc", "test_acc", "adv_fgsm_acc", "gap"])
        for (mode, seed), records in sorted(self.runs.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            for r in records:
                w.writerow([seed, mode, r.epoch] + r.row()[2:])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for s in self.seeds:
            lines.append(
                f"seed {s}: mean gap ce={self.mean_gap('ce', s):.4f} rl={self.mean_gap('rl', s):.4f}; "
                f"rl checkpoints with gap < {GAP_THRESHOLD:.2f}: {self.share_under_threshold('rl', s):.0%}"
            )
        verdict = "holds" if self.trend_holds() else "does not hold"
        lines.append(f"rl gap <= ce gap in {self.seeds_rl_not_worse()} of {len(self.seeds)} seeds; trend {verdict}")
        return "\n".join(lines) + "\n"


def run_trend_study(
    train_set: Dataset,
    test_set: Dataset,
    out_dir,
    seeds: Sequence[int] = (0, 1, 2),
    base: Optional[TrainConfig] = None,
) -> TrendReport:
    """Train CE and RL models for every seed under ``base`` and collect their metrics."""
    base = base or TrainConfig(epochs=30, checkpoint_every=5, adv_mode="fgsm")
    out = Path(out_dir)
    report = TrendReport(list(seeds))
    for seed in seeds:
        for mode in ("ce", "rl"):
            cfg = dataclasses.replace(base, loss_mode=mode, seed=seed)
            result = train(cfg, train_set, test_set, out / f"{mode}_seed{seed}")
            report.runs[(mode, seed)] = result.metrics
    (out / "trend.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.summary())
    return report


def main(argv: Optional[Sequence[str]] = None) -> int:
    p = argparse.ArgumentParser(prog="python -m rlclassify.study", description=__doc__.splitlines()[0])
    p.add_argument("--data", required=True, help="CIFAR-10 binary directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subset", type=int, default=10_000, help="training samples used (default: 10000)")
    p.add_argument("--epochs", type=int, default=30, help="epochs per run (default: 30)")
    p.add_argument("--checkpoint-every", type=int, default=5, help="measurement interval (default: 5)")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds (default: 0,1,2)")
    args = p.parse_args(argv)
    train_set, test_set = load_cifar10(args.data, train_limit=args.subset)
    base = TrainConfig(epochs=args.epochs, checkpoint_every=args.checkpoint_every, adv_mode="fgsm")
    report = run_trend_study(train_set, test_set, args.out, [int(s) for s in args.seeds.split(",")], base)
    sys.stdout.write(report.summary())
    return 0


if __name__ == "__main__":
    sys.exit(main())
