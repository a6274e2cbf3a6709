"""Ancestral sampling: sequential over pixel groups, parallel within each group."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from pyrpix.network.model import Conditioning, MultiscaleModel, normalize_levels
from pyrpix.pyramid import GENERATED_CORNERS, BASE, Corner, GeometryError, GroupId, merge
from pyrpix.rng import uniform
from pyrpix.tensor import log_softmax_rows, no_grad


class SamplingError(FloatingPointError):
    def __init__(self, message: str, trace: "SampleTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class TraceStep:
    group: GroupId
    channel: int
    evals: int
    log_prob: float


@dataclass
class SampleTrace:
    seed: int
    temperature: float = 1.0
    steps: list[TraceStep] = field(default_factory=list)
    base_evals: int = 0
    encoder_evals: int = 0
    shallow_evals: int = 0
    elapsed: float = 0.0

    @property
    def sequential_steps(self) -> int:
        return self.base_evals + self.encoder_evals + self.shallow_evals

    @property
    def log_prob(self) -> float:
        return math.fsum(s.log_prob for s in self.steps)

    def to_text(self) -> str:
        lines = [f"seed={self.seed}", f"temperature={self.temperature!r}"]
        lines += [
            f"step group={s.group} channel={s.channel} evals={s.evals} log_prob={s.log_prob!r}" for s in self.steps
        ]
        lines += [
            f"sequential_steps={self.sequential_steps}",
            f"base_evals={self.base_evals}",
            f"encoder_evals={self.encoder_evals}",
            f"shallow_evals={self.shallow_evals}",
            f"log_prob={self.log_prob!r}",
            f"elapsed={self.elapsed:.6f}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SampleTrace":
        tr = cls(seed=0)
        for line in text.splitlines():
            if line.startswith("step "):
                kv = dict(p.split("=", 1) for p in line[5:].split())
                tr.steps.append(
                    TraceStep(GroupId.parse(kv["group"]), int(kv["channel"]), int(kv["evals"]), float(kv["log_prob"]))
                )
            elif "=" in line:
                k, v = line.split("=", 1)
                if k in ("seed", "base_evals", "encoder_evals", "shallow_evals"):
                    setattr(tr, k, int(v))
                elif k in ("temperature", "elapsed"):
                    setattr(tr, k, float(v))
        return tr


class _Run:
    """Shared state for one batched sampling pass."""

    def __init__(self, model, seeds, cond, temperature, argmax):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.model = model
        self.cfg = model.config
        self.seeds = np.asarray([int(s) & 0xFFFFFFFFFFFFFFFF for s in seeds], dtype=np.uint64)
        self.B = len(self.seeds)
        self.cond = cond
        self.temperature = temperature
        self.argmax = argmax
        self.traces = [SampleTrace(int(s), temperature) for s in self.seeds]
        self.t0 = time.perf_counter()

    def fail(self, msg: str):
        raise SamplingError(msg, self.traces[0])

    def draw(self, logits: np.ndarray, group: GroupId, pixel: np.ndarray, channel: int):
        """Sample one level per row of logits [B, P, K]; returns (levels, model log-probs)."""
        if not np.all(np.isfinite(logits)):
            self.fail(f"non-finite logits in group {group} channel {channel}")
        logp = log_softmax_rows(logits)
        if self.argmax:
            v = logits.argmax(axis=-1)
        else:
            scaled = logp if self.temperature == 1.0 else log_softmax_rows(logits / self.temperature)
            cdf = np.cumsum(np.exp(scaled), axis=-1)
            u = uniform(self.seeds[:, None], self.model.schedule.index(group), pixel[None, :], channel)
            v = np.minimum((cdf < (u * cdf[..., -1:].squeeze(-1))[..., None]).sum(axis=-1), logits.shape[-1] - 1)
        lp = np.take_along_axis(logp, v[..., None], axis=-1)[..., 0]
        return v, lp

    def record(self, group: GroupId, channel: int, evals: int, lp: np.ndarray):
        tot = lp.sum(axis=1)
        for tr, t in zip(self.traces, tot):
            tr.steps.append(TraceStep(group, channel, evals, float(t)))

    def count(self, kind: str, n: int = 1):
        for tr in self.traces:
            setattr(tr, kind, getattr(tr, kind) + n)

    def finish(self):
        el = time.perf_counter() - self.t0
        for tr in self.traces:
            tr.elapsed = el


def _target_index(model, s: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Linear target-resolution index of scale-s coordinates."""
    stride = 1 << (model.num_scales - s)
    return (rows * stride) * model.schedule.target_size[1] + cols * stride


def _sample_base(run: _Run) -> np.ndarray:
    model, cfg = run.model, run.cfg
    C, K = cfg.channels, cfg.levels
    h, w = model.schedule.base_size
    img = np.zeros((run.B, C, h, w), dtype=np.int64)
    norm = np.zeros((run.B, C, h, w))
    lps = np.zeros((C, run.B, h * w))
    for r in range(h):
        for c in range(w):
            pix = _target_index(model, 0, np.array([r]), np.array([c]))
            for k in range(C):
                logits = model.base_forward(norm, run.cond).data[:, k * K : (k + 1) * K, r, c]
                run.count("base_evals")
                v, lp = run.draw(logits[:, None, :], BASE, pix, k)
                img[:, k, r, c] = v[:, 0]
                norm[:, k, r, c] = normalize_levels(v[:, 0], K)
                lps[k, :, r * w + c] = lp[:, 0]
    for k in range(C):
        run.record(BASE, k, h * w, lps[k])
    return img


def _sample_scale(run: _Run, s: int, low: np.ndarray) -> np.ndarray:
    model, cfg = run.model, run.cfg
    C, K = cfg.channels, cfg.levels
    B, _, h, w = low.shape
    corners = {Corner.UL: low}
    known = {Corner.UL: normalize_levels(low, K)}
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    feat = model.cond_features(s, run.cond, B)
    for g in GENERATED_CORNERS:
        group = GroupId(s, g)
        dr, dc = g.offset
        pix_all = _target_index(model, s, 2 * rows + dr, 2 * cols + dc)
        out = np.zeros((B, C, h, w), dtype=np.int64)
        out_norm = np.zeros((B, C, h, w))
        if cfg.upscaler.kind == "A":
            for k in range(C):
                prefix = out_norm[:, :k] if k else None
                logits = model.typeA_forward(s, g, known, prefix, run.cond, feat).data  # B,K,h,w
                run.count("encoder_evals")
                v, lp = run.draw(logits.transpose(0, 2, 3, 1).reshape(B, h * w, K), group, pix_all.ravel(), k)
                out[:, k] = v.reshape(B, h, w)
                out_norm[:, k] = normalize_levels(out[:, k], K)
                run.record(group, k, 1, lp)
        else:
            m = cfg.upscaler.patch
            F = model.typeB_encode(s, g, known, run.cond, feat)
            run.count("encoder_evals")
            lps = np.zeros((C, B, h * w))
            for pr in range(m):
                for pc in range(m):
                    sel_r, sel_c = np.meshgrid(np.arange(pr, h, m), np.arange(pc, w, m), indexing="ij")
                    flat = (sel_r * w + sel_c).ravel()
                    for k in range(C):
                        logits = model.typeB_logits(s, g, out_norm, F).data[:, k * K : (k + 1) * K]
                        run.count("shallow_evals")
                        sub = logits[:, :, sel_r, sel_c].reshape(B, K, -1).transpose(0, 2, 1)
                        v, lp = run.draw(sub, group, pix_all.ravel()[flat], k)
                        out[:, k, sel_r, sel_c] = v.reshape(B, *sel_r.shape)
                        out_norm[:, k, sel_r, sel_c] = normalize_levels(out[:, k, sel_r, sel_c], K)
                        lps[k][:, flat] = lp
            for k in range(C):
                run.record(group, k, 1 + m * m if k == 0 else m * m, lps[k])
        corners[g] = out
        known[g] = out_norm
    return merge(corners)


def _run(model, seeds, cond, temperature, argmax, start_scale: int, low: Optional[np.ndarray]):
    run = _Run(model, seeds, cond, temperature, argmax)
    with no_grad():
        img = _sample_base(run) if low is None else low
        levels = [img]
        for s in range(start_scale + 1, model.num_scales + 1):
            img = _sample_scale(run, s, img)
            levels.append(img)
    run.finish()
    return img, run.traces, levels


def sample_batch(
    model: MultiscaleModel,
    seeds: Sequence[int],
    cond: Optional[Conditioning] = None,
    temperature: float = 1.0,
    argmax: bool = False,
    batch_size: Optional[int] = None,
    return_pyramid: bool = False,
):
    """Draw one image per seed; returns ``(images [B,C,H,W], traces)``.

    ``batch_size`` only changes how many seeds share a network pass; the
    images are identical for any value. With ``return_pyramid`` a third item
    lists the intermediate images from the base to the target.
    """
    seeds = list(seeds)
    bs = batch_size or max(len(seeds), 1)
    imgs, traces, pyrs = [], [], []
    for lo in range(0, len(seeds), bs):
        sub = None if cond is None else cond.take(slice(lo, lo + bs))
        img, tr, lv = _run(model, seeds[lo : lo + bs], sub, temperature, argmax, 0, None)
        imgs.append(img)
        traces.extend(tr)
        pyrs.append(lv)
    images = np.concatenate(imgs, axis=0)
    if return_pyramid:
        levels = [np.concatenate([p[i] for p in pyrs], axis=0) for i in range(len(pyrs[0]))]
        return images, traces, levels
    return images, traces


def sample(
    model: MultiscaleModel,
    cond: Optional[Conditioning] = None,
    seed: int = 0,
    temperature: float = 1.0,
    argmax: bool = False,
) -> tuple[np.ndarray, SampleTrace]:
    images, traces = sample_batch(model, [seed], cond, temperature, argmax)
    return images[0], traces[0]


def flat_sample(
    model_flat: MultiscaleModel, cond: Optional[Conditioning] = None, seed: int = 0, temperature: float = 1.0
) -> tuple[np.ndarray, SampleTrace]:
    """Raster-order baseline: one PixelCNN evaluation per (pixel, channel)."""
    if model_flat.num_scales != 0:
        raise GeometryError("flat_sample needs a model whose base resolution is the target")
    return sample(model_flat, cond, seed, temperature)


def superresolve(
    model: MultiscaleModel,
    low_res: np.ndarray,
    cond: Optional[Conditioning] = None,
    seed: int = 0,
    temperature: float = 1.0,
    argmax: bool = False,
    return_trace: bool = False,
):
    """Complete a scale-s image [C, h, w] to the target resolution."""
    low = np.asarray(low_res)
    if low.ndim != 3 or low.shape[0] != model.config.channels:
        raise GeometryError(f"low-res image must be [C, h, w] with C={model.config.channels}")
    s = model.schedule.scale_of_size(low.shape[1:])
    if not np.issubdtype(low.dtype, np.integer):
        if np.any(low != np.round(low)):
            raise ValueError("low-res intensities must be integer levels")
    low = low.astype(np.int64)
    if low.min() < 0 or low.max() >= model.config.levels:
        raise ValueError("low-res intensities outside the model's levels")
    img, traces, _ = _run(model, [seed], cond, temperature, argmax, s, low[None])
    return (img[0], traces[0]) if return_trace else img[0]
