"""Labeled patch datasets and their on-disk layout.

Layout::

    root/
      manifest.csv          # path,label,split
      target/000000.png
      background/000001.png
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .raster import BACKGROUND, CLASS_LABELS, TARGET, RasterError, read_rgb

TRAIN = "train"
VALIDATION = "validation"
SPLITS = (TRAIN, VALIDATION)


@dataclass(frozen=True)
class PatchDataset:
    patches: np.ndarray  # (n, h, w, 3) uint8
    labels: np.ndarray  # (n,) int, 1 = target, 0 = background
    splits: tuple[str, ...]

    def __post_init__(self):
        patches = np.asarray(self.patches, dtype=np.uint8)
        labels = np.asarray(self.labels, dtype=np.int64)
        if patches.ndim != 4 or patches.shape[-1] != 3:
            if patches.size == 0:
                patches = np.zeros((0, 80, 80, 3), dtype=np.uint8)
            else:
                raise ValueError(f"patches must be (n, h, w, 3), got {patches.shape}")
        if len(labels) != len(patches) or len(self.splits) != len(patches):
            raise ValueError("patches, labels and splits must have equal length")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0 (background) or 1 (target)")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split(s) {sorted(bad)}")
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "splits", tuple(self.splits))

    def __len__(self):
        return len(self.labels)

    def subset(self, split: str) -> "PatchDataset":
        idx = [i for i, s in enumerate(self.splits) if s == split]
        return PatchDataset(self.patches[idx], self.labels[idx], tuple(self.splits[i] for i in idx))

    def concat(self, other: "PatchDataset") -> "PatchDataset":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        return PatchDataset(
            np.concatenate([self.patches, other.patches]),
            np.concatenate([self.labels, other.labels]),
            self.splits + other.splits,
        )

    def class_counts(self, split: str | None = None) -> dict[str, int]:
        labels = self.labels if split is None else self.labels[[s == split for s in self.splits]]
        return {TARGET: int((labels == 1).sum()), BACKGROUND: int((labels == 0).sum())}


def assign_splits(labels, train_fraction: float = 0.8) -> tuple[str, ...]:
    """First ``train_fraction`` of each class goes to training, the rest to validation."""
    labels = np.asarray(labels)
    splits = [TRAIN] * len(labels)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        n_train = int(round(train_fraction * len(idx)))
        for i in idx[n_train:]:
            splits[i] = VALIDATION
    return tuple(splits)


def save_dataset(ds: PatchDataset, root: str | Path) -> Path:
    root = Path(root)
    for name in CLASS_LABELS:
        (root / name).mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "split"])
        for i, (patch, label, split) in enumerate(zip(ds.patches, ds.labels, ds.splits)):
            name = TARGET if label == 1 else BACKGROUND
            rel = f"{name}/{i:06d}.png"
            Image.fromarray(patch).save(root / rel)
            w.writerow([rel, name, split])
    return manifest


def load_dataset(root: str | Path) -> PatchDataset:
    root = Path(root)
    manifest = root / "manifest.csv" if root.is_dir() else root
    root = manifest.parent
    if not manifest.exists():
        raise RasterError(f"dataset manifest not found: {manifest}")
    patches, labels, splits = [], [], []
    with manifest.open(newline="") as fh:
        for row in csv.DictReader(fh):
            if row["label"] not in CLASS_LABELS:
                raise RasterError(f"{manifest}: unknown label {row['label']!r}")
            patches.append(read_rgb(root / row["path"]))
            labels.append(1 if row["label"] == TARGET else 0)
            splits.append(row["split"])
    if patches and len({p.shape for p in patches}) != 1:
        raise RasterError(f"{manifest}: patches have mixed sizes")
    return PatchDataset(np.array(patches, dtype=np.uint8), np.array(labels), tuple(splits))
