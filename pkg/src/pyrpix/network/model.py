"""MultiscaleModel: base PixelCNN + one upscaler per scale + conditioning encoders."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import ndimage

from pyrpix.network.config import ConfigError, ModelConfig
from pyrpix.network.layers import Conv, ParamStore
from pyrpix.network.pixelcnn import PixelCNN
from pyrpix.network.upscaler import TypeAUpscaler, TypeBUpscaler
from pyrpix.pyramid import GENERATED_CORNERS, Corner, GeometryError, GroupId
from pyrpix.tensor import (
    Tensor,
    channel_slice,
    concat,
    crop2d,
    no_grad,
    relu,
    strided_slice,
)


@dataclass(frozen=True)
class Conditioning:
    """Optional class label(s) and/or a spatial feature map [Cc, h, w] (or batched)."""

    class_id: Optional[object] = None
    spatial: Optional[np.ndarray] = None

    def class_ids(self, batch: int) -> Optional[np.ndarray]:
        if self.class_id is None:
            return None
        ids = np.asarray(self.class_id, dtype=np.int64).reshape(-1)
        if ids.size == 1 and batch != 1:
            ids = np.repeat(ids, batch)
        if ids.size != batch:
            raise ValueError(f"{ids.size} class ids for batch {batch}")
        return ids

    def spatial_batch(self, batch: int) -> Optional[np.ndarray]:
        if self.spatial is None:
            return None
        sp = np.asarray(self.spatial, dtype=np.float64)
        if sp.ndim == 3:
            sp = np.broadcast_to(sp, (batch, *sp.shape))
        if sp.shape[0] != batch:
            raise ValueError(f"spatial conditioning batch {sp.shape[0]} != {batch}")
        return sp

    def take(self, index) -> "Conditioning":
        """Sub-batch selection (for batched conditioning)."""
        cid = None if self.class_id is None else np.asarray(self.class_id).reshape(-1)
        sp = None if self.spatial is None else np.asarray(self.spatial)
        if cid is not None and cid.size > 1:
            cid = cid[index]
        if sp is not None and sp.ndim == 4:
            sp = sp[index]
        return Conditioning(cid, sp)


NO_COND = Conditioning()


def resize_bilinear(maps: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of [B, C, h, w] maps to [B, C, *size] (pixel-centre aligned)."""
    h, w = maps.shape[-2:]
    if (h, w) == tuple(size):
        return np.ascontiguousarray(maps, dtype=np.float64)
    zoom = (1, 1, size[0] / h, size[1] / w)
    return ndimage.zoom(maps, zoom, order=1, grid_mode=True, mode="nearest")


def normalize_levels(levels: np.ndarray, K: int) -> np.ndarray:
    """Integer levels in [0, K) -> centred floats (v + 0.5)/K - 0.5."""
    return (np.asarray(levels, dtype=np.float64) + 0.5) / K - 0.5


@dataclass
class FactorBlock:
    """Logits for several (group, channel) factors sharing one spatial shape.

    Entry ``j`` owns rows ``[j*batch, (j+1)*batch)`` of ``logits`` [N, K, h, w]
    and ``targets`` [N, h, w].
    """

    entries: list[tuple[GroupId, int]]
    batch: int
    logits: Tensor
    targets: np.ndarray


def _slot(c: Corner) -> int:
    return GENERATED_CORNERS.index(c)


class MultiscaleModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.schedule = config.schedule
        self.params = ParamStore(seed)
        C, K = config.channels, config.levels
        cond_w = config.cond_hidden if config.cond_channels else 0
        b = config.base
        self.base = PixelCNN(
            self.params,
            "base",
            channels=C,
            levels=K,
            layers=b.layers,
            hidden=b.hidden,
            kernel=b.kernel,
            first_kernel=b.first_kernel,
            num_classes=config.num_classes,
            side_channels=cond_w,
        )
        up_cls = TypeAUpscaler if config.upscaler.kind == "A" else TypeBUpscaler
        self.upscalers: list[Optional[dict[Corner, object]]] = [None]
        for s in range(1, self.schedule.num_scales + 1):
            if config.upscaler.separate_corners:
                nets = {
                    c: up_cls(self.params, f"up{s}/{c.name}", config.upscaler, config.num_classes, cond_w)
                    for c in GENERATED_CORNERS
                }
            else:
                net = up_cls(self.params, f"up{s}", config.upscaler, config.num_classes, cond_w)
                nets = {c: net for c in GENERATED_CORNERS}
            self.upscalers.append(nets)
        self.cond_enc: list[Optional[Conv]] = []
        for s in range(self.schedule.num_scales + 1):
            self.cond_enc.append(
                Conv(self.params, f"cond{s}", config.cond_channels, cond_w, 3, rng=self.params.cond_rng)
                if config.cond_channels
                else None
            )

    # -- geometry ----------------------------------------------------------

    @property
    def num_scales(self) -> int:
        return self.schedule.num_scales

    def grid_size(self, s: int) -> tuple[int, int]:
        """Spatial size of the tensors the scale-s network works on."""
        return self.schedule.scale_size(0) if s == 0 else self.schedule.scale_size(s - 1)

    # -- conditioning ------------------------------------------------------

    def class_ids(self, cond: Optional[Conditioning], batch: int) -> Optional[np.ndarray]:
        ids = (cond or NO_COND).class_ids(batch)
        if ids is not None:
            if not self.config.num_classes:
                raise ConfigError("model has no class conditioning")
            if ids.min() < 0 or ids.max() >= self.config.num_classes:
                raise ValueError(f"class id outside [0, {self.config.num_classes})")
        return ids

    def cond_features(self, s: int, cond: Optional[Conditioning], batch: int) -> Optional[Tensor]:
        sp = (cond or NO_COND).spatial_batch(batch)
        if sp is None:
            return None
        if not self.config.cond_channels:
            raise ConfigError("model has no spatial conditioning")
        if sp.shape[1] != self.config.cond_channels:
            raise ValueError(f"spatial conditioning has {sp.shape[1]} channels, expected {self.config.cond_channels}")
        return relu(self.cond_enc[s](Tensor(resize_bilinear(sp, self.grid_size(s)))))

    # -- context assembly ----------------------------------------------------

    def context(self, corner: Corner, known: Mapping[Corner, Tensor], prefix: Optional[Tensor], zeros: Tensor) -> Tensor:
        """Four corner slots; corners after ``corner`` are zero, the target slot holds ``prefix``."""
        C = self.config.channels
        slots = []
        for q in Corner:
            if q < corner:
                if q not in known:
                    raise GeometryError(f"context for {corner.name} is missing corner {q.name}")
                slots.append(known[q])
            elif q == corner and prefix is not None and prefix.shape[1] > 0:
                k = prefix.shape[1]
                slots.append(prefix if k == C else concat([prefix, channel_slice(zeros, k, C)], axis=1))
            else:
                slots.append(zeros)
        return concat(slots, axis=1)

    # -- teacher-forced evaluation -------------------------------------------

    def factor_blocks(
        self,
        x: Tensor,
        levels: np.ndarray,
        cond: Optional[Conditioning] = None,
        crop: Optional[int] = None,
        crop_rng: Optional[np.random.Generator] = None,
    ) -> list[FactorBlock]:
        """All factors of the joint, teacher-forced on ground truth.

        ``x`` is the normalised target image [B, C, H, W] (a Tensor so that
        gradients w.r.t. pixels are available); ``levels`` the matching integer
        array. With ``crop`` set, scales larger than ``crop`` are trained on a
        random block-aligned crop (training-only).
        """
        cfg = self.config
        C, K = cfg.channels, cfg.levels
        B = x.shape[0]
        S = self.num_scales
        if tuple(x.shape[1:]) != (C, *self.schedule.target_size):
            raise GeometryError(f"image shape {x.shape[1:]} != {(C, *self.schedule.target_size)}")
        cls = self.class_ids(cond, B)
        blocks = []

        step = 1 << S
        xb = strided_slice(x, 0, 0, step)
        tb = levels[..., ::step, ::step]
        logits = self.base(xb, cls, self.cond_features(0, cond, B))
        blocks.append(
            FactorBlock(
                [(GroupId(0), k) for k in range(C)],
                B,
                concat([channel_slice(logits, k * K, (k + 1) * K) for k in range(C)], axis=0),
                np.concatenate([tb[:, k] for k in range(C)], axis=0),
            )
        )

        for s in range(1, S + 1):
            step = 1 << (S - s)
            xs = strided_slice(x, 0, 0, step)
            ts = levels[..., ::step, ::step]
            feat = self.cond_features(s, cond, B)
            if crop is not None and xs.shape[-1] > crop:
                rng = crop_rng or np.random.default_rng(0)
                r0 = 2 * int(rng.integers(0, (xs.shape[-2] - crop) // 2 + 1))
                c0 = 2 * int(rng.integers(0, (xs.shape[-1] - crop) // 2 + 1))
                xs = crop2d(xs, r0, c0, crop, crop)
                ts = ts[..., r0 : r0 + crop, c0 : c0 + crop]
                if feat is not None:
                    feat = crop2d(feat, r0 // 2, c0 // 2, crop // 2, crop // 2)
            corners = {q: strided_slice(xs, *q.offset, 2) for q in Corner}
            tcorner = {q: ts[..., q.offset[0] :: 2, q.offset[1] :: 2] for q in Corner}
            zeros = Tensor(np.zeros(corners[Corner.UL].shape))
            nets = self.upscalers[s]
            groups: dict[int, list[Corner]] = {}
            for c in GENERATED_CORNERS:
                groups.setdefault(id(nets[c]), []).append(c)
            for members in groups.values():
                net = nets[members[0]]
                if net.kind == "A":
                    blocks.append(self._typeA_block(net, s, members, corners, tcorner, zeros, cls, feat))
                else:
                    blocks.append(self._typeB_block(net, s, members, corners, tcorner, zeros, cls, feat))
        return blocks

    def _typeA_block(self, net, s, members, corners, tcorner, zeros, cls, feat) -> FactorBlock:
        C = self.config.channels
        B = zeros.shape[0]
        entries, ctxs, ids, targets = [], [], [], []
        for c in members:
            for k in range(C):
                prefix = channel_slice(corners[c], 0, k) if k else None
                ctxs.append(self.context(c, corners, prefix, zeros))
                ids.append(np.full(B, _slot(c) * C + k))
                targets.append(tcorner[c][:, k])
                entries.append((GroupId(s, c), k))
        n = len(entries)
        logits = net(
            concat(ctxs, axis=0),
            np.concatenate(ids),
            None if cls is None else np.tile(cls, n),
            None if feat is None else concat([feat] * n, axis=0),
        )
        return FactorBlock(entries, B, logits, np.concatenate(targets, axis=0))

    def _typeB_block(self, net, s, members, corners, tcorner, zeros, cls, feat) -> FactorBlock:
        C, K = self.config.channels, self.config.levels
        B = zeros.shape[0]
        n = len(members)
        ctx = concat([self.context(c, corners, None, zeros) for c in members], axis=0)
        F = net.encode(
            ctx,
            np.concatenate([np.full(B, _slot(c)) for c in members]),
            None if cls is None else np.tile(cls, n),
            None if feat is None else concat([feat] * n, axis=0),
        )
        logits = net.patch_logits(concat([corners[c] for c in members], axis=0), F)
        entries = [(GroupId(s, c), k) for k in range(C) for c in members]
        return FactorBlock(
            entries,
            B,
            concat([channel_slice(logits, k * K, (k + 1) * K) for k in range(C)], axis=0),
            np.concatenate([tcorner[c][:, k] for k in range(C) for c in members], axis=0),
        )

    # -- inference helpers (numpy in, Tensor out) ----------------------------

    def base_forward(self, base_norm: np.ndarray, cond: Optional[Conditioning] = None) -> Tensor:
        B = base_norm.shape[0]
        return self.base(Tensor(base_norm), self.class_ids(cond, B), self.cond_features(0, cond, B))

    def typeA_forward(
        self,
        s: int,
        corner: Corner,
        known: Mapping[Corner, np.ndarray],
        prefix: Optional[np.ndarray],
        cond: Optional[Conditioning] = None,
        feat: Optional[Tensor] = None,
    ) -> Tensor:
        """Logits [B, K, h, w] for channel ``prefix.shape[1]`` of ``corner``."""
        net = self.upscalers[s][corner]
        ref = known[Corner.UL]
        B = ref.shape[0]
        k = 0 if prefix is None else prefix.shape[1]
        zeros = Tensor(np.zeros(ref.shape))
        ctx = self.context(
            corner,
            {q: Tensor(v) for q, v in known.items()},
            None if prefix is None or k == 0 else Tensor(prefix),
            zeros,
        )
        if feat is None:
            feat = self.cond_features(s, cond, B)
        ids = np.full(B, _slot(corner) * self.config.channels + k)
        return net(ctx, ids, self.class_ids(cond, B), feat)

    def typeB_encode(
        self,
        s: int,
        corner: Corner,
        known: Mapping[Corner, np.ndarray],
        cond: Optional[Conditioning] = None,
        feat: Optional[Tensor] = None,
    ) -> Tensor:
        net = self.upscalers[s][corner]
        ref = known[Corner.UL]
        B = ref.shape[0]
        ctx = self.context(corner, {q: Tensor(v) for q, v in known.items()}, None, Tensor(np.zeros(ref.shape)))
        if feat is None:
            feat = self.cond_features(s, cond, B)
        return net.encode(ctx, np.full(B, _slot(corner)), self.class_ids(cond, B), feat)

    def typeB_logits(self, s: int, corner: Corner, target_norm: np.ndarray, features: Tensor) -> Tensor:
        """[B, C*K, h, w] shallow-PixelCNN logits for the given partial target."""
        return self.upscalers[s][corner].patch_logits(Tensor(target_norm), features)

    # -- bookkeeping ---------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.params.as_dict()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        names = set(self.params)
        if set(state) != names:
            missing = sorted(names - set(state))
            extra = sorted(set(state) - names)
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, v in state.items():
            p = self.params[k]
            if p.shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k}: {np.shape(v)} vs {p.shape}")
            p.data = np.array(v, dtype=np.float64)

    def zero_(self) -> "MultiscaleModel":
        for p in self.params.values():
            p.data = np.zeros_like(p.data)
        return self

    def masks(self) -> dict[str, np.ndarray]:
        """Every causal mask in the model, keyed by the owning layer's name."""
        out = {}
        nets = [self.base] + [n.shallow for d in self.upscalers[1:] for n in set(d.values()) if n.kind == "B"]
        for net in nets:
            for conv in [*net.convs, net.head]:
                out[conv.name] = conv.mask
        return out


def init_params(config: ModelConfig, seed: int = 0) -> MultiscaleModel:
    """Build a model with deterministic, fan-in scaled weights and zero biases."""
    return MultiscaleModel(config, seed)


def _as_batch(image: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    image = np.asarray(image)
    if image.ndim == ndim - 1:
        return image[None], True
    if image.ndim != ndim:
        raise GeometryError(f"expected {ndim - 1}-D image or {ndim}-D batch, got shape {image.shape}")
    return image, False


def base_logits(model: MultiscaleModel, image: np.ndarray, cond: Optional[Conditioning] = None) -> np.ndarray:
    """Logits [h0, w0, C, K] (or [B, h0, w0, C, K]) for integer-level base images."""
    imgs, single = _as_batch(image, 4)
    C, K = model.config.channels, model.config.levels
    if tuple(imgs.shape[1:]) != (C, *model.schedule.base_size):
        raise GeometryError(f"base image shape {imgs.shape[1:]} != {(C, *model.schedule.base_size)}")
    with no_grad():
        out = model.base_forward(normalize_levels(imgs, K), cond).data
    B, _, h, w = out.shape
    out = out.reshape(B, C, K, h, w).transpose(0, 3, 4, 1, 2)
    return out[0] if single else out


def upscaler_logits(
    model: MultiscaleModel,
    scale: int,
    corner: Corner,
    known: Mapping[Corner, np.ndarray],
    cond: Optional[Conditioning] = None,
    channel_prefix: Optional[np.ndarray] = None,
    target: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Logits [h, w, K] for the next channel of ``corner`` at ``scale``.

    ``known`` maps every earlier corner (UL included) to integer levels
    [C, h, w]; ``channel_prefix`` holds the target corner's already-sampled
    channels [k, h, w]. For type-B, ``target`` may carry the target corner's
    already-known values in patch raster order (zeros elsewhere); it
    defaults to the prefix padded with zeros.
    """
    if not 1 <= scale <= model.num_scales:
        raise GeometryError(f"scale {scale} outside [1, {model.num_scales}]")
    corner = Corner(corner)
    if corner not in GENERATED_CORNERS:
        raise GeometryError("UL is never generated by an upscaler")
    C, K = model.config.channels, model.config.levels
    single = np.asarray(known[Corner.UL]).ndim == 3 if Corner.UL in known else True
    kn = {q: _as_batch(v, 4)[0] for q, v in known.items()}
    for q in Corner:
        if q < corner and q not in kn:
            raise GeometryError(f"missing prerequisite corner {q.name}")
    B, _, h, w = kn[Corner.UL].shape
    k = 0 if channel_prefix is None else _as_batch(channel_prefix, 4)[0].shape[1]
    if k >= C:
        raise ValueError("channel prefix already covers every channel")
    kn_norm = {q: normalize_levels(v, K) for q, v in kn.items() if q < corner}
    with no_grad():
        if model.config.upscaler.kind == "A":
            prefix = None if k == 0 else normalize_levels(_as_batch(channel_prefix, 4)[0], K)
            out = model.typeA_forward(scale, corner, kn_norm, prefix, cond).data
        else:
            if target is None:
                tgt = np.zeros((B, C, h, w))
                if k:
                    tgt[:, :k] = normalize_levels(_as_batch(channel_prefix, 4)[0], K)
            else:
                tgt = normalize_levels(_as_batch(target, 4)[0], K)
            feats = model.typeB_encode(scale, corner, kn_norm, cond)
            out = model.typeB_logits(scale, corner, tgt, feats).data[:, k * K : (k + 1) * K]
    out = out.transpose(0, 2, 3, 1)
    return out[0] if single else out
