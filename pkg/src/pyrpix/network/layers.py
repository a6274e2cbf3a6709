"""Parameter registry, causal masks and the conv layer wrapper."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from pyrpix.tensor import Tensor, add_channel_bias, conv2d, embedding


class ParamStore:
    """Ordered name -> Tensor registry; every parameter is registered once."""

    def __init__(self, seed: int = 0):
        self._params: dict[str, Tensor] = {}
        # conditioning weights draw from their own stream so that adding a
        # conditioning input leaves the unconditional weights unchanged
        self.rng, self.cond_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def as_dict(self) -> dict[str, Tensor]:
        return dict(self._params)

    def count(self) -> int:
        return sum(t.size for t in self._params.values())


def channel_groups(n: int, channels: int) -> np.ndarray:
    """Colour group (0..channels-1) owning each of n feature maps."""
    return np.arange(n) * channels // n


def causal_mask(out_ch: int, in_ch: int, kh: int, kw: int, channels: int, kind: str) -> np.ndarray:
    """Raster-scan mask with R->G->B ordering at the centre tap.

    kind 'A' excludes the current sub-pixel (first layer); 'B' includes it.
    """
    if kind not in ("A", "B"):
        raise ValueError(f"mask kind must be 'A' or 'B', got {kind!r}")
    m = np.zeros((out_ch, in_ch, kh, kw))
    cy, cx = kh // 2, kw // 2
    m[:, :, :cy, :] = 1.0
    m[:, :, cy, :cx] = 1.0
    go = channel_groups(out_ch, channels)[:, None]
    gi = channel_groups(in_ch, channels)[None, :]
    m[:, :, cy, cx] = (gi < go) if kind == "A" else (gi <= go)
    return m


class Conv:
    """Conv layer with optional fixed causal mask, fan-in initialised."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        in_ch: int,
        out_ch: int,
        k: int,
        mask: Optional[np.ndarray] = None,
        gain: float = 1.0,
        rng: Optional[np.random.Generator] = None,
    ):
        self.name = name
        self.mask = mask
        w = (rng or store.rng).standard_normal((out_ch, in_ch, k, k))
        fan_in = (mask.sum(axis=(1, 2, 3)) if mask is not None else np.full(out_ch, in_ch * k * k)).astype(float)
        w *= (gain / np.sqrt(np.maximum(fan_in, 1.0)))[:, None, None, None]
        if mask is not None:
            w *= mask
        self.weight = store.add(f"{name}/w", w)
        self.bias = store.add(f"{name}/b", np.zeros(out_ch))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, mask=self.mask, padding="same")


class ClassBias:
    """Learned per-class additive bias for one layer (zero-initialised)."""

    def __init__(self, store: ParamStore, name: str, num_classes: int, width: int):
        self.table = store.add(name, np.zeros((num_classes, width)))

    def __call__(self, x: Tensor, class_ids: Optional[np.ndarray]) -> Tensor:
        if class_ids is None:
            return x
        return add_channel_bias(x, embedding(self.table, class_ids))
