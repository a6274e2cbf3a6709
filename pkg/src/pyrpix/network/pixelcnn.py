"""Masked-convolution PixelCNN used at the base resolution and inside type-B patches."""
from __future__ import annotations

from typing import Optional

import numpy as np

from pyrpix.network.layers import ClassBias, Conv, ParamStore, causal_mask
from pyrpix.tensor import Tensor, add, relu


class PixelCNN:
    """Stack of masked convolutions emitting ``channels * levels`` logits per pixel.

    Layer 0 uses mask A with ``first_kernel``; the following ``layers - 1``
    use mask B with ``kernel``; a mask-B 1x1 head produces the logits, grouped
    so that output channel ``o`` belongs to colour ``o // levels``.

    Side inputs never pass through a mask: ``side_channels`` feature maps
    (spatial conditioning, or encoder features for type-B) enter each layer
    through an unmasked 1x1 projection, and class ids through a per-layer
    bias.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        *,
        channels: int,
        levels: int,
        layers: int,
        hidden: int,
        kernel: int = 3,
        first_kernel: int = 7,
        num_classes: int = 0,
        side_channels: int = 0,
        side_rng: Optional[np.random.Generator] = None,
    ):
        self.channels = channels
        self.levels = levels
        self.convs: list[Conv] = []
        self.side: list[Optional[Conv]] = []
        self.cls: list[Optional[ClassBias]] = []
        widths = [channels] + [hidden] * layers
        for i in range(layers):
            k = first_kernel if i == 0 else kernel
            mask = causal_mask(widths[i + 1], widths[i], k, k, channels, "A" if i == 0 else "B")
            self.convs.append(Conv(store, f"{name}/l{i}", widths[i], widths[i + 1], k, mask))
        self.head = Conv(
            store, f"{name}/head", hidden, channels * levels, 1, causal_mask(channels * levels, hidden, 1, 1, channels, "B")
        )
        for i in range(layers):
            self.side.append(
                Conv(store, f"{name}/l{i}/side", side_channels, hidden, 1, rng=side_rng or store.cond_rng)
                if side_channels
                else None
            )
            self.cls.append(ClassBias(store, f"{name}/l{i}/cls", num_classes, hidden) if num_classes else None)

    def __call__(self, x: Tensor, class_ids=None, side: Optional[Tensor] = None) -> Tensor:
        h = x
        for conv, proj, cls in zip(self.convs, self.side, self.cls):
            a = conv(h)
            if proj is not None and side is not None:
                a = add(a, proj(side))
            if cls is not None:
                a = cls(a, class_ids)
            h = relu(a)
        return self.head(h)
