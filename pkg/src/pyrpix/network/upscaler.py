"""Upscaling networks that predict one corner group from the known corners.

Both kinds see the same context layout on the corner grid (h x w for a
2h x 2w scale image): four slots of ``channels`` maps, one per corner in
UL, UR, LL, LR order. Slots of corners not yet generated are zero, so a
corner's logits cannot depend on later corners by construction.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from pyrpix.network.layers import ClassBias, Conv, ParamStore
from pyrpix.network.pixelcnn import PixelCNN
from pyrpix.tensor import Tensor, add, add_channel_bias, embedding, from_patches, relu, to_patches


class ResNetTrunk:
    """Input conv + pre-activation residual blocks (relu-conv-relu-conv)."""

    def __init__(
        self,
        store: ParamStore,
        name: str,
        in_ch: int,
        hidden: int,
        blocks: int,
        *,
        num_embed: int,
        num_classes: int = 0,
        cond_channels: int = 0,
        kernel: int = 3,
    ):
        self.conv_in = Conv(store, f"{name}/in", in_ch, hidden, kernel)
        self.embed = store.add(f"{name}/embed", np.zeros((num_embed, hidden)))
        self.cond_in = (
            Conv(store, f"{name}/in/cond", cond_channels, hidden, kernel, rng=store.cond_rng) if cond_channels else None
        )
        self.cls_in = ClassBias(store, f"{name}/in/cls", num_classes, hidden) if num_classes else None
        self.blocks = []
        # second conv of each block starts small so deep stacks stay bounded
        gain2 = 1.0 / np.sqrt(max(blocks, 1))
        for b in range(blocks):
            c1 = Conv(store, f"{name}/block{b}/c1", hidden, hidden, kernel)
            c2 = Conv(store, f"{name}/block{b}/c2", hidden, hidden, kernel, gain=gain2)
            cls = ClassBias(store, f"{name}/block{b}/cls", num_classes, hidden) if num_classes else None
            self.blocks.append((c1, c2, cls))

    def __call__(
        self,
        ctx: Tensor,
        embed_ids: np.ndarray,
        class_ids=None,
        cond: Optional[Tensor] = None,
    ) -> Tensor:
        h = self.conv_in(ctx)
        if self.cond_in is not None and cond is not None:
            h = add(h, self.cond_in(cond))
        h = add_channel_bias(h, embedding(self.embed, embed_ids))
        if self.cls_in is not None:
            h = self.cls_in(h, class_ids)
        for c1, c2, cls in self.blocks:
            t = c1(relu(h))
            if cls is not None:
                t = cls(t, class_ids)
            h = add(h, c2(relu(t)))
        return h


class TypeAUpscaler:
    """ResNet over the known context emitting K logits for one (corner, channel).

    Embedding id is ``corner_slot * channels + channel`` where corner_slot is
    0, 1, 2 for UR, LL, LR. The target slot holds the corner's channels that
    precede the predicted one; the rest of that slot is zero.
    """

    kind = "A"

    def __init__(self, store: ParamStore, name: str, cfg, num_classes: int = 0, cond_channels: int = 0):
        C, K = cfg.channels, cfg.levels
        self.channels, self.levels = C, K
        self.trunk = ResNetTrunk(
            store,
            name,
            4 * C,
            cfg.hidden,
            cfg.resnet_layers,
            num_embed=3 * C,
            num_classes=num_classes,
            cond_channels=cond_channels,
        )
        self.head = Conv(store, f"{name}/head", cfg.hidden, K, 1)
        self.head_embed = store.add(f"{name}/head/embed", np.zeros((3 * C, K)))

    def __call__(self, ctx: Tensor, embed_ids: np.ndarray, class_ids=None, cond: Optional[Tensor] = None) -> Tensor:
        h = self.trunk(ctx, embed_ids, class_ids, cond)
        out = self.head(relu(h))
        return add_channel_bias(out, embedding(self.head_embed, embed_ids))


class TypeBUpscaler:
    """ResNet encoder + shared shallow PixelCNN over contiguous MxM feature patches.

    The encoder sees only the known corners (target slot zero) and runs once
    per corner. The shallow network sees the target corner's own values within
    a single patch, causally masked in raster/colour order, plus the encoder
    features of that patch through unmasked 1x1 projections.
    """

    kind = "B"

    def __init__(self, store: ParamStore, name: str, cfg, num_classes: int = 0, cond_channels: int = 0):
        self.channels, self.levels, self.patch = cfg.channels, cfg.levels, cfg.patch
        self.trunk = ResNetTrunk(
            store,
            name,
            4 * cfg.channels,
            cfg.hidden,
            cfg.resnet_layers,
            num_embed=3,
            num_classes=num_classes,
            cond_channels=cond_channels,
        )
        self.shallow = PixelCNN(
            store,
            f"{name}/shallow",
            channels=cfg.channels,
            levels=cfg.levels,
            layers=cfg.shallow_layers - 1,
            hidden=cfg.shallow_hidden,
            kernel=3,
            first_kernel=3,
            side_channels=cfg.hidden,
            side_rng=store.rng,
        )

    def encode(self, ctx: Tensor, corner_slot: np.ndarray, class_ids=None, cond: Optional[Tensor] = None) -> Tensor:
        return relu(self.trunk(ctx, corner_slot, class_ids, cond))

    def patch_logits(self, target: Tensor, features: Tensor) -> Tensor:
        """Teacher-forced [B, C*K, h, w] logits from per-patch shallow passes."""
        B, _, h, w = target.shape
        m = self.patch
        out = self.shallow(to_patches(target, m), side=to_patches(features, m))
        return from_patches(out, B, h, w)
