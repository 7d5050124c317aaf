"""Datasets (CIFAR-10 binary batches, synthetic images) and checkpoint files.

Checkpoint container layout (all integers little-endian)::

    b"RCK1"                      magic
    u32  version                 currently 1
    u32  n, n bytes              UTF-8 JSON metadata
    u32  tensor count
    per tensor:
      u16 name length, name bytes (UTF-8)
      u8  rank, rank x u32 extents
      float32 payload, row-major
    u32  CRC-32 of every preceding byte
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ChecksumError, ConfigError, FormatError, MagicError, VersionError

CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"

MAGIC = b"RCK1"
VERSION = 1


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.labels)} labels for images of shape {self.images.shape}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise FormatError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int, seed: Optional[int] = None) -> "Dataset":
        """First ``n`` samples, or a seeded random selection of ``n`` when ``seed`` is given."""
        if seed is None:
            idx = np.arange(min(n, len(self)))
        else:
            idx = np.sort(np.random.default_rng(seed).permutation(len(self))[:n])
        return Dataset(self.images[idx], self.labels[idx], self.split)


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Decode one CIFAR-10 binary batch into ``uint8`` images ``[N,32,32,3]`` and labels."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise FormatError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{path}: record {bad} has label byte {labels[bad]}")
    planes = records[:, 1:].reshape(-1, 3, 32, 32)
    return planes.transpose(0, 2, 3, 1), labels


def _to_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(255)


def load_cifar10(dir_path, train_limit: Optional[int] = None) -> tuple[Dataset, Dataset]:
    """Load the five training batches and the test batch from ``dir_path``.

    A ``cifar-10-batches-bin`` subdirectory is also accepted, which is how
    the official archive unpacks.
    """
    root = Path(dir_path)
    if not (root / CIFAR_TEST_FILE).exists() and (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    missing = [f for f in CIFAR_TRAIN_FILES + [CIFAR_TEST_FILE] if not (root / f).is_file()]
    if missing:
        raise FileNotFoundError(f"{root}: missing CIFAR-10 files {missing}")
    parts = [read_cifar_batch(root / f) for f in CIFAR_TRAIN_FILES]
    train_px = np.concatenate([p for p, _ in parts])
    train_y = np.concatenate([y for _, y in parts])
    if train_limit is not None:
        train_px, train_y = train_px[:train_limit], train_y[:train_limit]
    test_px, test_y = read_cifar_batch(root / CIFAR_TEST_FILE)
    return Dataset(_to_unit(train_px), train_y, "train"), Dataset(_to_unit(test_px), test_y, "test")


def write_cifar_batch(path, pixels: np.ndarray, labels) -> None:
    """Encode ``uint8`` ``[N,32,32,3]`` images in the CIFAR-10 binary layout (used for fixtures)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    planes = pixels.transpose(0, 3, 1, 2).reshape(len(pixels), -1)
    np.concatenate([labels, planes], axis=1).tofile(path)


def make_synthetic(num_samples: int, num_classes: int = 10, seed: int = 0, split: str = "train") -> Dataset:
    """Class-separable images: a class-coloured 8x8 block at a class-specific cell, over noise."""
    if num_samples < num_classes:
        raise ConfigError("need at least one sample per class")
    if not 2 <= num_classes <= 16:
        raise ConfigError("synthetic data supports 2..16 classes")
    palette = np.random.default_rng(1234).uniform(0.3, 1.0, size=(16, 3))
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(num_samples) % num_classes)
    images = rng.uniform(0.0, 0.25, size=(num_samples, 32, 32, 3))
    for i, k in enumerate(labels):
        r, c = divmod(int(k), 4)
        block = palette[k] + rng.uniform(-0.05, 0.05, size=(8, 8, 3))
        images[i, r * 8:(r + 1) * 8, c * 8:(c + 1) * 8, :] = block
    return Dataset(np.clip(images, 0.0, 1.0).astype(np.float32), labels, split)


@dataclass
class Checkpoint:
    """Everything needed to resume a run bit-exactly."""

    epoch: int
    network_config: dict
    params: dict[str, np.ndarray]
    optimizer: dict = field(default_factory=dict)
    optimizer_slots: dict[str, np.ndarray] = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)
    config_digest: str = ""
    rng_state: Optional[dict] = None


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "epoch": ckpt.epoch,
        "network_config": ckpt.network_config,
        "optimizer": ckpt.optimizer,
        "train_config": ckpt.train_config,
        "config_digest": ckpt.config_digest,
        "rng_state": ckpt.rng_state,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    tensors += [(f"slot/{k}", v) for k, v in ckpt.optimizer_slots.items()]

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    body = buf.getvalue()
    tmp = Path(f"{path}.partial")
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise MagicError(f"{path}: not an RCK1 checkpoint")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this reader understands {VERSION}")
    body, (stored,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != stored:
        raise ChecksumError(f"{path}: checksum mismatch")

    r = _Reader(body)
    r.take(8)
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    params, slots = {}, {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key] = arr
        elif kind == "slot":
            slots[key] = arr
        else:
            raise FormatError(f"unknown tensor group in {name!r}")
    if r.pos != len(body):
        raise FormatError("trailing bytes after tensor table")
    return Checkpoint(
        epoch=meta["epoch"],
        network_config=meta["network_config"],
        params=params,
        optimizer=meta["optimizer"],
        optimizer_slots=slots,
        train_config=meta["train_config"],
        config_digest=meta["config_digest"],
        rng_state=meta["rng_state"],
    )
