"""Synthetic image families with known entropy.

Every family is a finite mixture of clean patterns followed by independent
sub-pixel noise: with probability ``noise`` a value moves to one of the other
K-1 levels, chosen uniformly. The entropy of such a source is computed
exactly by enumeration when the image space is small, and otherwise by the
closed form ``H_pix + H(pattern) / n`` (exact when patterns are identifiable
from a noisy image, an upper bound in general).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from pyrpix.data.dataset import Dataset

FAMILIES = ("checkerboard_noise", "gradient_ramp", "two_class_textures")
EXACT_LIMIT = 1 << 16


class SyntheticError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    family: str
    height: int = 8
    width: int = 8
    levels: int = 2
    channels: int = 1
    noise: float = 0.0
    seed: int = 0
    cell_sizes: tuple[int, ...] = (1, 2, 4)
    cell_size: Optional[int] = None  # fixes the checkerboard cell size
    phase: Optional[tuple[int, int]] = None  # fixes the checkerboard phase
    entropy_per_subpixel: float = field(init=False, compare=False)
    conditional_entropy_per_subpixel: float = field(init=False, compare=False)
    entropy_exact: bool = field(init=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SyntheticError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if not 0.0 <= self.noise <= 0.5:
            raise SyntheticError(f"noise {self.noise} outside [0, 0.5]")
        if self.levels < 2 or self.channels not in (1, 3) or self.height < 1 or self.width < 1:
            raise SyntheticError("need levels >= 2, channels in {1, 3} and positive dims")
        pats, probs, classes = patterns(self)
        n = self.channels * self.height * self.width
        exact = self.levels**n <= EXACT_LIMIT
        h = source_entropy(pats, probs, self.levels, self.noise, exact) / n
        hc = 0.0
        for y in np.unique(classes):
            sel = classes == y
            py = probs[sel].sum()
            hc += py * source_entropy(pats[sel], probs[sel] / py, self.levels, self.noise, exact) / n
        object.__setattr__(self, "entropy_per_subpixel", h)
        object.__setattr__(self, "conditional_entropy_per_subpixel", hc)
        object.__setattr__(self, "entropy_exact", exact)

    @property
    def num_classes(self) -> int:
        return 2 if self.family == "two_class_textures" else 0


def pixel_entropy(noise: float, levels: int) -> float:
    """Nats of the per-sub-pixel noise channel."""
    if noise == 0.0:
        return 0.0
    return -noise * math.log(noise) - (1 - noise) * math.log1p(-noise) + noise * math.log(levels - 1)


def _checker(h, w, s, dy, dx):
    r, c = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return ((r + dy) // s + (c + dx) // s) % 2


def patterns(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct clean images [P, C, H, W], their probabilities and class ids."""
    H, W, K, top = spec.height, spec.width, spec.levels, spec.levels - 1
    raw: list[tuple[np.ndarray, float, int]] = []
    if spec.family == "checkerboard_noise":
        sizes = (spec.cell_size,) if spec.cell_size else spec.cell_sizes
        for s in sizes:
            phases = [spec.phase] if spec.phase else [(a, b) for a in range(2 * s) for b in range(2 * s)]
            for dy, dx in phases:
                raw.append((_checker(H, W, s, dy, dx) * top, 1.0 / (len(sizes) * len(phases)), 0))
    elif spec.family == "gradient_ramp":
        for axis, length in ((1, W), (0, H)):
            t = np.arange(length)
            ramp = ((t + 0.5) * K / length).astype(np.int64)
            for desc in (False, True):
                v = ramp[::-1] if desc else ramp
                img = np.broadcast_to(v[None, :] if axis == 1 else v[:, None], (H, W))
                raw.append((img, 0.25, 0))
    else:
        r, c = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        for y, coord in ((0, r), (1, c)):
            for ph in (0, 1):
                raw.append((((coord + ph) % 2) * top, 0.25, y))
    merged: dict[tuple, list] = {}
    for img, p, y in raw:
        key = (y, np.asarray(img, dtype=np.int64).tobytes())
        if key in merged:
            merged[key][1] += p
        else:
            merged[key] = [np.asarray(img, dtype=np.int64), p, y]
    imgs = np.stack([np.broadcast_to(v[0], (spec.channels, H, W)) for v in merged.values()])
    probs = np.array([v[1] for v in merged.values()])
    classes = np.array([v[2] for v in merged.values()])
    return imgs, probs / probs.sum(), classes


def source_entropy(pats: np.ndarray, probs: np.ndarray, levels: int, noise: float, exact: bool) -> float:
    """Total nats of one noisy image drawn from the pattern mixture."""
    n = pats[0].size
    # identical clean images in different classes are one outcome here
    uniq, inv = np.unique(pats.reshape(len(pats), -1), axis=0, return_inverse=True)
    pu = np.bincount(inv.ravel(), weights=probs)
    if not exact:
        hp = -float(np.sum(pu * np.log(pu)))
        return n * pixel_entropy(noise, levels) + hp
    idx = np.arange(levels**n, dtype=np.int64)[:, None]
    powers = levels ** np.arange(n - 1, -1, -1, dtype=np.int64)
    xs = (idx // powers) % levels  # [X, n]
    px = np.zeros(len(xs))
    for pat, p in zip(uniq, pu):
        d = (xs != pat[None, :]).sum(axis=1)
        if noise == 0.0:
            px += p * (d == 0)
        else:
            px += p * np.exp((n - d) * math.log1p(-noise) + d * math.log(noise / (levels - 1)))
    nz = px[px > 0]
    return -math.fsum((nz * np.log(nz)).tolist())


def generate(spec: SyntheticSpec, count: int, split_fractions=(0.8, 0.1, 0.1)) -> Dataset:
    """``count`` images drawn from the family; identical for identical specs."""
    if count < 0:
        raise SyntheticError("count must be non-negative")
    rng = np.random.default_rng(spec.seed)
    pats, probs, classes = patterns(spec)
    pick = rng.choice(len(pats), size=count, p=probs)
    imgs = pats[pick].copy()
    if spec.noise > 0:
        flip = rng.random(imgs.shape) < spec.noise
        shift = rng.integers(1, spec.levels, size=imgs.shape)
        imgs = np.where(flip, (imgs + shift) % spec.levels, imgs)
    cls = classes[pick] if spec.num_classes else None
    return Dataset(imgs, spec.levels, cls, split_fractions=split_fractions, seed=spec.seed)
