"""Pixel-group geometry for the dyadic sub-sampling pyramid.

Scale 0 is the base image. Each later scale doubles both axes; its pixels are
tiled by 2x2 blocks whose corners form four parity classes. The upper-left
class is exactly the previous scale's image, so only UR, LL and LR are
generated at each scale, in that order.

Images here are plain ndarrays shaped ``[..., H, W]`` (any leading axes).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping

import numpy as np


class GeometryError(ValueError):
    pass


class Corner(IntEnum):
    UL = 0
    UR = 1
    LL = 2
    LR = 3

    @property
    def offset(self) -> tuple[int, int]:
        """(row, col) parity of this corner inside a 2x2 block."""
        return divmod(int(self), 2)


GENERATED_CORNERS = (Corner.UR, Corner.LL, Corner.LR)


@dataclass(frozen=True, order=True)
class GroupId:
    scale: int
    corner: Corner | None = None

    def __post_init__(self):
        if self.scale < 0:
            raise GeometryError("scale must be >= 0")
        if self.scale == 0 and self.corner is not None:
            raise GeometryError("the base group has no corner")
        if self.scale > 0 and self.corner not in GENERATED_CORNERS:
            raise GeometryError(f"scale {self.scale} groups must be UR, LL or LR")

    def __str__(self) -> str:
        return "base" if self.scale == 0 else f"{self.scale}:{self.corner.name}"

    @classmethod
    def parse(cls, text: str) -> "GroupId":
        if text == "base":
            return cls(0)
        s, c = text.split(":")
        return cls(int(s), Corner[c])


BASE = GroupId(0)


def _doublings(small: int, big: int) -> int:
    if small < 1 or big < small or big % small:
        raise GeometryError(f"{big} is not a power-of-two multiple of {small}")
    ratio = big // small
    if ratio & (ratio - 1):
        raise GeometryError(f"ratio {ratio} is not a power of two")
    return ratio.bit_length() - 1


@dataclass(frozen=True)
class GroupSchedule:
    base_size: tuple[int, int]
    target_size: tuple[int, int]
    steps: tuple[GroupId, ...]

    @property
    def num_scales(self) -> int:
        """Number of upscaling steps S."""
        return len(self.steps) // 3

    def scale_size(self, s: int) -> tuple[int, int]:
        if not 0 <= s <= self.num_scales:
            raise GeometryError(f"scale {s} outside [0, {self.num_scales}]")
        return self.base_size[0] << s, self.base_size[1] << s

    def scale_of_size(self, size: tuple[int, int]) -> int:
        for s in range(self.num_scales + 1):
            if self.scale_size(s) == tuple(size):
                return s
        raise GeometryError(f"size {tuple(size)} matches no scale of {self.base_size}->{self.target_size}")

    def index(self, group: GroupId) -> int:
        return self.steps.index(group)

    def group_coords(self, group: GroupId) -> list[tuple[int, int]]:
        """Target-resolution coordinates of the pixels a group introduces, row-major."""
        S = self.num_scales
        stride = 1 << (S - group.scale)
        h, w = self.scale_size(group.scale)
        if group.scale == 0:
            return [(r * stride, c * stride) for r in range(h) for c in range(w)]
        dr, dc = group.corner.offset
        return [(r * stride, c * stride) for r in range(dr, h, 2) for c in range(dc, w, 2)]

    def group_map(self) -> np.ndarray:
        """[H, W] array holding the schedule index of the group owning each pixel."""
        out = np.full(self.target_size, -1, dtype=np.int64)
        for k, g in enumerate(self.steps):
            for r, c in self.group_coords(g):
                if out[r, c] != -1:
                    raise GeometryError(f"pixel {(r, c)} claimed twice")
                out[r, c] = k
        return out


def build_schedule(base_size, target_size) -> GroupSchedule:
    bh, bw = map(int, base_size)
    th, tw = map(int, target_size)
    sh, sw = _doublings(bh, th), _doublings(bw, tw)
    if sh != sw:
        raise GeometryError(f"axes double a different number of times ({sh} vs {sw})")
    steps = [BASE]
    for s in range(1, sh + 1):
        steps.extend(GroupId(s, c) for c in GENERATED_CORNERS)
    return GroupSchedule((bh, bw), (th, tw), tuple(steps))


def subsample(image: np.ndarray) -> np.ndarray:
    """Keep the upper-left pixel of every 2x2 block."""
    h, w = image.shape[-2:]
    if h % 2 or w % 2:
        raise GeometryError(f"cannot subsample odd dims {(h, w)}")
    return np.ascontiguousarray(image[..., ::2, ::2])


def pyramid(image: np.ndarray, num_scales: int) -> list[np.ndarray]:
    """[base, scale 1, ..., scale S=image] by repeated subsampling."""
    levels = [image]
    for _ in range(num_scales):
        levels.append(subsample(levels[-1]))
    return levels[::-1]


def split(image: np.ndarray, corner: Corner) -> np.ndarray:
    """Dense [..., h, w] tensor of one corner class of a [..., 2h, 2w] image."""
    h, w = image.shape[-2:]
    if h % 2 or w % 2:
        raise GeometryError(f"cannot split odd dims {(h, w)}")
    dr, dc = Corner(corner).offset
    return np.ascontiguousarray(image[..., dr::2, dc::2])


def split_all(image: np.ndarray) -> dict[Corner, np.ndarray]:
    return {c: split(image, c) for c in Corner}


def merge(parts: Mapping[Corner, np.ndarray]) -> np.ndarray:
    """Interleave corner tensors.

    ``{UL, UR}`` gives a column-interleaved ``[h, 2w]`` half, ``{UL, LL}`` a
    row-interleaved ``[2h, w]`` half, and all four corners the full image.
    """
    keys = set(parts)
    if keys == set(Corner):
        layout = (2, 2)
    elif keys == {Corner.UL, Corner.UR}:
        layout = (1, 2)
    elif keys == {Corner.UL, Corner.LL}:
        layout = (2, 1)
    else:
        missing = sorted(c.name for c in set(Corner) - keys)
        raise GeometryError(f"cannot merge corners {sorted(c.name for c in keys)}; missing {missing}")
    shapes = {np.shape(p) for p in parts.values()}
    if len(shapes) != 1:
        raise GeometryError(f"corner shapes differ: {sorted(shapes)}")
    ref = parts[Corner.UL]
    *lead, h, w = ref.shape
    out = np.empty((*lead, h * layout[0], w * layout[1]), dtype=ref.dtype)
    for c, part in parts.items():
        dr, dc = c.offset
        out[..., dr :: layout[0], dc :: layout[1]] = part
    return out
