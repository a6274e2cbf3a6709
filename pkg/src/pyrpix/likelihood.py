"""Exact joint negative log-likelihood under the pixel-group factorization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from pyrpix.network.model import Conditioning, FactorBlock, MultiscaleModel, normalize_levels
from pyrpix.pyramid import GeometryError, GroupId
from pyrpix.tensor import Tensor, add, no_grad, reshape, scale, softmax_xent, sum_all, transpose

LN2 = math.log(2.0)


class IntensityError(ValueError):
    pass


@dataclass
class NLLReport:
    total_nats: float
    per_group: list[tuple[GroupId, float]]
    subpixel_count: int
    nats_per_subpixel: float = field(init=False)
    bits_per_subpixel: float = field(init=False)

    def __post_init__(self):
        self.nats_per_subpixel = self.total_nats / self.subpixel_count
        self.bits_per_subpixel = self.nats_per_subpixel / LN2

    def to_text(self) -> str:
        lines = [
            f"total_nats={self.total_nats:.12g}",
            f"nats_per_subpixel={self.nats_per_subpixel:.12g}",
            f"bits_per_subpixel={self.bits_per_subpixel:.12g}",
            f"subpixel_count={self.subpixel_count}",
        ]
        lines += [f"group.{g}={v:.12g}" for g, v in self.per_group]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NLLReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        groups = [(GroupId.parse(k[6:]), float(v)) for k, v in kv.items() if k.startswith("group.")]
        return cls(float(kv["total_nats"]), groups, int(kv["subpixel_count"]))


def check_levels(model: MultiscaleModel, images: np.ndarray) -> np.ndarray:
    """Validate integer intensities in [0, K) with the model's target shape."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    cfg = model.config
    want = (cfg.channels, *model.schedule.target_size)
    if arr.ndim != 4 or tuple(arr.shape[1:]) != want:
        raise GeometryError(f"image shape {arr.shape} does not match model target {want}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise IntensityError("intensities must be integer levels")
    if arr.size and (arr.min() < 0 or arr.max() >= cfg.levels):
        raise IntensityError(f"intensities outside [0, {cfg.levels})")
    return arr.astype(np.int64)


def block_nll(block: FactorBlock) -> tuple[Tensor, np.ndarray]:
    """(summed nats Tensor, per-entry per-image nats [n_entries, batch])."""
    N, K, h, w = block.logits.shape
    rows = reshape(transpose(block.logits, (0, 2, 3, 1)), (N * h * w, K))
    _, per_item = softmax_xent(rows, block.targets.reshape(-1))
    per_entry = per_item.data.reshape(len(block.entries), block.batch, h * w).sum(axis=2)
    return sum_all(per_item), per_entry


def group_nll(
    model: MultiscaleModel,
    levels: np.ndarray,
    cond: Optional[Conditioning] = None,
    x: Optional[Tensor] = None,
    crop: Optional[int] = None,
    crop_rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, np.ndarray, int]:
    """Teacher-forced nats per schedule step.

    Returns ``(total, per_group, rows)``: the summed nats of the whole batch
    as a graph Tensor, a [B, len(steps)] array, and the number of sub-pixels
    scored (smaller than the image when cropping).
    """
    levels = check_levels(model, levels)
    if x is None:
        x = Tensor(normalize_levels(levels, model.config.levels))
    steps = model.schedule.steps
    index = {g: i for i, g in enumerate(steps)}
    per_group = np.zeros((levels.shape[0], len(steps)))
    total = None
    rows = 0
    for block in model.factor_blocks(x, levels, cond, crop, crop_rng):
        rows += block.targets.size
        t, per_entry = block_nll(block)
        total = t if total is None else add(total, t)
        for (g, _), nats in zip(block.entries, per_entry):
            per_group[:, index[g]] += nats
    return total, per_group, rows


def nll_loss(model, levels, cond=None, crop=None, crop_rng=None) -> tuple[Tensor, np.ndarray]:
    """Mean nats per evaluated sub-pixel over the batch, differentiable."""
    total, per_group, rows = group_nll(model, levels, cond, None, crop, crop_rng)
    return scale(total, 1.0 / rows), per_group


def joint_nll_batch(
    model: MultiscaleModel, images: np.ndarray, cond: Optional[Conditioning] = None, chunk: int = 4096
) -> np.ndarray:
    """Per-image, per-group nats [B, G] without building a graph."""
    images = check_levels(model, images)
    out = []
    with no_grad():
        for lo in range(0, images.shape[0], chunk):
            sub = cond.take(slice(lo, lo + chunk)) if cond is not None else None
            out.append(group_nll(model, images[lo : lo + chunk], sub)[1])
    return np.concatenate(out, axis=0) if out else np.zeros((0, len(model.schedule.steps)))


def joint_nll(model: MultiscaleModel, image: np.ndarray, cond: Optional[Conditioning] = None) -> NLLReport:
    """Exact NLL of one target-resolution image, quantized at the target only."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise GeometryError(f"expected a single [C, H, W] image, got shape {image.shape}")
    per = joint_nll_batch(model, image[None], cond)[0]
    groups = list(zip(model.schedule.steps, per.tolist()))
    return NLLReport(float(math.fsum(per)), groups, image.size)


def _stack_cond(conds: list[Optional[Conditioning]]) -> Optional[Conditioning]:
    if all(c is None or (c.class_id is None and c.spatial is None) for c in conds):
        return None
    ids = [None if c is None else c.class_id for c in conds]
    sps = [None if c is None else c.spatial for c in conds]
    if any(i is None for i in ids) and any(i is not None for i in ids):
        raise ValueError("mixed presence of class conditioning in one dataset")
    if any(s is None for s in sps) and any(s is not None for s in sps):
        raise ValueError("mixed presence of spatial conditioning in one dataset")
    return Conditioning(
        None if ids[0] is None else np.asarray(ids, dtype=np.int64),
        None if sps[0] is None else np.stack([np.asarray(s, dtype=np.float64) for s in sps]),
    )


def dataset_nll(model: MultiscaleModel, dataset: Iterable, batch_size: int = 64) -> NLLReport:
    """Mean report over a stream of images or (image, Conditioning) pairs.

    ``total_nats`` and per-group values are per-image means; memory use is
    independent of the dataset length.
    """
    steps = model.schedule.steps
    sums = np.zeros(len(steps))
    count = 0
    shape = None
    imgs, conds = [], []

    def flush():
        nonlocal sums, count
        per = joint_nll_batch(model, np.stack(imgs), _stack_cond(conds))
        for row in per:
            sums += row
        count += per.shape[0]
        imgs.clear()
        conds.clear()

    for item in dataset:
        img, cond = item if isinstance(item, tuple) else (item, None)
        img = np.asarray(img)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise GeometryError(f"heterogeneous image dims {img.shape} vs {shape}")
        imgs.append(img)
        conds.append(cond)
        if len(imgs) == batch_size:
            flush()
    if imgs:
        flush()
    if count == 0:
        raise ValueError("empty dataset")
    mean = sums / count
    return NLLReport(float(math.fsum(mean)), list(zip(steps, mean.tolist())), int(np.prod(shape)))
