"""In-memory datasets with seeded splits, and manifest-backed image directories."""
from __future__ import annotations

from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from pyrpix.data.netpbm import read_image, write_image
from pyrpix.network.model import Conditioning

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.txt"


class DatasetError(ValueError):
    pass


class Dataset:
    """Integer-level images [N, C, H, W] with optional class ids.

    Split membership comes from an explicit per-image label array when
    given (directories), else from a permutation seeded by ``seed``.
    """

    def __init__(
        self,
        images: np.ndarray,
        levels: int,
        class_ids: Optional[np.ndarray] = None,
        *,
        split_fractions: Sequence[float] = (0.8, 0.1, 0.1),
        seed: int = 0,
        split_labels: Optional[Sequence[str]] = None,
    ):
        self.images = np.asarray(images, dtype=np.int64)
        if self.images.ndim != 4:
            raise DatasetError(f"images must be [N, C, H, W], got {self.images.shape}")
        self.levels = levels
        self.class_ids = None if class_ids is None else np.asarray(class_ids, dtype=np.int64)
        if self.class_ids is not None and len(self.class_ids) != len(self.images):
            raise DatasetError("one class id per image required")
        if len(split_fractions) != 3 or min(split_fractions) < 0 or abs(sum(split_fractions) - 1) > 1e-9:
            raise DatasetError(f"split fractions {split_fractions} must be three non-negatives summing to 1")
        self.split_fractions = tuple(split_fractions)
        self.seed = seed
        if split_labels is not None:
            labels = np.asarray(split_labels)
            unknown = set(labels.tolist()) - set(SPLITS)
            if unknown:
                raise DatasetError(f"unknown split names {sorted(unknown)}")
            self._labels = labels
        else:
            self._labels = self._seeded_labels()

    def _seeded_labels(self) -> np.ndarray:
        n = len(self.images)
        perm = np.random.default_rng(np.random.SeedSequence([self.seed, 0x5EED])).permutation(n)
        n_train = int(round(self.split_fractions[0] * n))
        n_val = int(round(self.split_fractions[1] * n))
        labels = np.empty(n, dtype=object)
        labels[perm[:n_train]] = "train"
        labels[perm[n_train : n_train + n_val]] = "val"
        labels[perm[n_train + n_val :]] = "test"
        return labels.astype(str)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def split_indices(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return np.nonzero(self._labels == name)[0]

    def split(self, name: str) -> "Dataset":
        idx = self.split_indices(name)
        return Dataset(
            self.images[idx],
            self.levels,
            None if self.class_ids is None else self.class_ids[idx],
            split_labels=[name] * len(idx),
        )

    def cond(self, idx) -> Optional[Conditioning]:
        if self.class_ids is None:
            return None
        return Conditioning(self.class_ids[idx])

    def batch(self, idx) -> tuple[np.ndarray, Optional[Conditioning]]:
        idx = np.asarray(idx)
        return self.images[idx], self.cond(idx)

    def __iter__(self) -> Iterator[tuple[np.ndarray, Optional[Conditioning]]]:
        for i in range(len(self)):
            yield self.images[i], (None if self.class_ids is None else Conditioning(int(self.class_ids[i])))


def save_directory(root, dataset: Dataset) -> Path:
    """Write one netpbm file per image plus ``manifest.txt`` (path class_id split)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if dataset.shape[0] == 1 else "ppm"
    lines = []
    for i in range(len(dataset)):
        rel = f"img{i:06d}.{ext}"
        write_image(root / rel, dataset.images[i], dataset.levels)
        cls = "-" if dataset.class_ids is None else str(int(dataset.class_ids[i]))
        lines.append(f"{rel} {cls} {dataset._labels[i]}")
    (root / MANIFEST).write_text("\n".join(lines) + "\n")
    return root


def load_directory(root, levels: int) -> Dataset:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise DatasetError(f"{manifest}: missing manifest")
    paths, classes, labels = [], [], []
    for n, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DatasetError(f"{manifest}:{n}: expected 'path class_id split'")
        paths.append(parts[0])
        classes.append(parts[1])
        labels.append(parts[2])
    if not paths:
        raise DatasetError(f"{manifest}: no records")
    images = [read_image(root / p, levels) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DatasetError(f"{root}: heterogeneous image dims {sorted(shapes)}")
    has_cls = [c != "-" for c in classes]
    if any(has_cls) and not all(has_cls):
        raise DatasetError(f"{manifest}: class ids must be given for all records or none")
    cls = np.array([int(c) for c in classes]) if all(has_cls) else None
    return Dataset(np.stack(images), levels, cls, split_labels=labels)
