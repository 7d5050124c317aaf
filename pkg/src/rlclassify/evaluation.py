"""Accuracy measurements, epsilon sweeps, gradient dumps and run comparison."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .attacks import AttackConfig, fgsm, input_gradient, pgd_linf, worst_case_ensemble
from .data_io import Dataset
from .errors import ConfigError, FormatError, InputError
from .network import Network, predict_classes

METRICS_FIELDS = ["epoch", "loss_mode", "train_acc", "test_acc", "adv_fgsm_acc", "gap"]
GAP_THRESHOLD = 0.02


@dataclass
class MetricsRecord:
    epoch: int
    loss_mode: str
    train_acc: float
    test_acc: float
    adv_fgsm_acc: float

    @property
    def gap(self) -> float:
        return self.train_acc - self.test_acc

    def row(self) -> list[str]:
        return [
            str(self.epoch),
            self.loss_mode,
            f"{self.train_acc:.6f}",
            f"{self.test_acc:.6f}",
            f"{self.adv_fgsm_acc:.6f}",
            f"{self.gap:.6f}",
        ]


def write_metrics_csv(path, records: Iterable[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_FIELDS)
        for r in records:
            w.writerow(r.row())


def read_metrics_csv(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_FIELDS:
            raise FormatError(f"{path}: expected columns {METRICS_FIELDS}, got {header}")
        out = []
        for row in reader:
            if len(row) != len(METRICS_FIELDS):
                raise FormatError(f"{path}: malformed row {row}")
            out.append(MetricsRecord(int(row[0]), row[1], float(row[2]), float(row[3]), float(row[4])))
    return out


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise InputError(f"{predictions.shape} predictions vs {labels.shape} labels")
    if predictions.size == 0:
        raise InputError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def default_ensemble(cfg: AttackConfig) -> list[tuple[str, AttackConfig]]:
    """FGSM, PGD as configured, and PGD with a random start, all at ``cfg.epsilon``."""
    fg = AttackConfig(epsilon=cfg.epsilon, step_size=cfg.epsilon, num_steps=1)
    pgd = AttackConfig(epsilon=cfg.epsilon, step_size=cfg.step_size, num_steps=cfg.num_steps)
    pgd_rs = AttackConfig(epsilon=cfg.epsilon, step_size=cfg.step_size, num_steps=cfg.num_steps, random_start=True)
    return [("fgsm", fg), ("pgd", pgd), ("pgd", pgd_rs)]


def attack_images(net: Network, images, labels, attack: str, cfg: AttackConfig, members=None) -> np.ndarray:
    if attack == "none":
        return np.asarray(images)
    if attack == "fgsm":
        return fgsm(net, images, labels, cfg)
    if attack == "pgd":
        return pgd_linf(net, images, labels, cfg)
    if attack == "ensemble":
        return worst_case_ensemble(net, images, labels, members or default_ensemble(cfg))
    raise ConfigError(f"unknown attack {attack!r}; choose from none, fgsm, pgd, ensemble")


def natural_accuracy(net: Network, dataset: Dataset, batch_size: int = 256) -> float:
    return accuracy(predict_classes(net, dataset.images, batch_size), dataset.labels)


def adversarial_accuracy(
    net: Network,
    dataset: Dataset,
    attack: str,
    cfg: AttackConfig,
    batch_size: int = 256,
    members=None,
) -> float:
    """Argmax accuracy on ``dataset`` after attacking every batch."""
    preds = []
    for i in range(0, len(dataset), batch_size):
        x = dataset.images[i:i + batch_size]
        y = dataset.labels[i:i + batch_size]
        adv = attack_images(net, x, y, attack, cfg, members)
        preds.append(predict_classes(net, adv, None))
    return accuracy(np.concatenate(preds), dataset.labels)


@dataclass
class SweepResult:
    attack: str
    points: list[tuple[float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "adv_acc"])
        for eps, acc in self.points:
            w.writerow([f"{eps:.8f}", f"{acc:.6f}"])
        return buf.getvalue()


def epsilon_sweep(
    net: Network,
    dataset: Dataset,
    attack: str,
    eps_list: Sequence[float],
    base: Optional[AttackConfig] = None,
    batch_size: int = 256,
) -> SweepResult:
    """Adversarial accuracy at each budget; ``eps_list`` must be ascending and start at 0."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ConfigError("empty epsilon list")
    if eps_list[0] != 0.0 or any(b < a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("epsilon list must be ascending and start at 0")
    base = base or AttackConfig()
    result = SweepResult(attack)
    for eps in eps_list:
        cfg = AttackConfig(epsilon=eps, step_size=base.step_size, num_steps=base.num_steps)
        result.points.append((eps, adversarial_accuracy(net, dataset, attack, cfg, batch_size)))
    return result


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def gradient_image(grad: np.ndarray) -> np.ndarray:
    """Map sign(grad) from {-1, 0, +1} to {0, 128, 255}."""
    s = np.sign(grad)
    return np.where(s > 0, 255, np.where(s < 0, 0, 128)).astype(np.uint8)


def export_gradients(
    net: Network,
    images,
    labels,
    out_dir,
    epsilon: float = 8 / 255,
    prefix: str = "sample",
) -> list[Path]:
    """Write original / signed-gradient / adversarial PNG triples, one per sample."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    grads = input_gradient(net, images, labels)
    adv = fgsm(net, images, labels, AttackConfig(epsilon=epsilon, step_size=epsilon, num_steps=1))
    written = []
    for i in range(len(images)):
        for kind, arr in (
            ("orig", _to_uint8(images[i])),
            ("grad", gradient_image(grads[i])),
            ("adv", _to_uint8(adv[i])),
        ):
            path = out_dir / f"{prefix}{i:04d}_{kind}.png"
            Image.fromarray(arr, mode="RGB").save(path, format="PNG")
            written.append(path)
    return written


@dataclass
class RunComparison:
    epochs: list[int]
    deltas: list[dict]
    best_a: MetricsRecord
    best_b: MetricsRecord
    gap_a: list[tuple[int, float]]
    gap_b: list[tuple[int, float]]
    flagged_a: list[int]
    flagged_b: list[int]

    def format(self) -> str:
        lines = ["epoch,d_train_acc,d_test_acc,d_adv_fgsm_acc,d_gap"]
        for d in self.deltas:
            lines.append(
                f"{d['epoch']},{d['train_acc']:.6f},{d['test_acc']:.6f},{d['adv_fgsm_acc']:.6f},{d['gap']:.6f}"
            )
        lines.append(f"best_adv_a: epoch {self.best_a.epoch} adv_fgsm_acc {self.best_a.adv_fgsm_acc:.6f}")
        lines.append(f"best_adv_b: epoch {self.best_b.epoch} adv_fgsm_acc {self.best_b.adv_fgsm_acc:.6f}")
        lines.append(f"gap_over_{GAP_THRESHOLD:.2f}_a: {self.flagged_a}")
        lines.append(f"gap_over_{GAP_THRESHOLD:.2f}_b: {self.flagged_b}")
        return "\n".join(lines) + "\n"


def best_checkpoint(records: Sequence[MetricsRecord]) -> MetricsRecord:
    """Record with the highest FGSM accuracy; the earliest one wins ties."""
    return max(records, key=lambda r: (r.adv_fgsm_acc, -r.epoch))


def compare_runs(metrics_a, metrics_b, threshold: float = GAP_THRESHOLD) -> RunComparison:
    """Compare two metrics files (paths or record lists) checkpoint by checkpoint."""
    a = read_metrics_csv(metrics_a) if isinstance(metrics_a, (str, Path)) else list(metrics_a)
    b = read_metrics_csv(metrics_b) if isinstance(metrics_b, (str, Path)) else list(metrics_b)
    if not a or not b:
        raise FormatError("metrics files must contain at least one record")
    by_epoch_b = {r.epoch: r for r in b}
    epochs = [r.epoch for r in a if r.epoch in by_epoch_b]
    deltas = []
    for ra in a:
        rb = by_epoch_b.get(ra.epoch)
        if rb is None:
            continue
        deltas.append({
            "epoch": ra.epoch,
            "train_acc": rb.train_acc - ra.train_acc,
            "test_acc": rb.test_acc - ra.test_acc,
            "adv_fgsm_acc": rb.adv_fgsm_acc - ra.adv_fgsm_acc,
            "gap": rb.gap - ra.gap,
        })
    return RunComparison(
        epochs=epochs,
        deltas=deltas,
        best_a=best_checkpoint(a),
        best_b=best_checkpoint(b),
        gap_a=[(r.epoch, r.gap) for r in a],
        gap_b=[(r.epoch, r.gap) for r in b],
        flagged_a=[r.epoch for r in a if r.gap > threshold],
        flagged_b=[r.epoch for r in b if r.gap > threshold],
    )
