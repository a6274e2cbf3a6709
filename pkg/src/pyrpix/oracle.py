"""Brute-force certificates: exhaustive normalization, causality probes, gradient checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from pyrpix.likelihood import joint_nll_batch
from pyrpix.network.model import Conditioning, MultiscaleModel, normalize_levels
from pyrpix.pyramid import GeometryError
from pyrpix.tensor import Tensor, mul, no_grad, sum_all
from pyrpix.tensor import ops as _ops

ENUM_BOUND = 1 << 16


class EnumerationError(ValueError):
    pass


@dataclass(frozen=True)
class EnumSpec:
    """An image space small enough to list: K^(C*H*W) <= 2^16."""

    channels: int
    height: int
    width: int
    levels: int
    base: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.count > ENUM_BOUND:
            raise EnumerationError(
                f"{self.levels}^{self.channels * self.height * self.width} images exceeds the bound {ENUM_BOUND}"
            )

    @property
    def count(self) -> int:
        return self.levels ** (self.channels * self.height * self.width)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    def images(self, lo: int = 0, hi: Optional[int] = None) -> np.ndarray:
        """Images ``lo..hi`` in row-major intensity order (first sub-pixel most significant)."""
        hi = self.count if hi is None else hi
        n = self.channels * self.height * self.width
        idx = np.arange(lo, hi, dtype=np.int64)[:, None]
        powers = self.levels ** np.arange(n - 1, -1, -1, dtype=np.int64)
        return ((idx // powers) % self.levels).reshape(-1, *self.shape)


def _check_spec(model: MultiscaleModel, spec: EnumSpec) -> None:
    cfg = model.config
    want = (cfg.channels, *model.schedule.target_size)
    if spec.shape != want or spec.levels != cfg.levels:
        raise GeometryError(f"spec {spec.shape} K={spec.levels} does not match model {want} K={cfg.levels}")


def enumerate_mass(
    model: MultiscaleModel, spec: EnumSpec, cond: Optional[Conditioning] = None, chunk: int = 4096
) -> tuple[float, np.ndarray]:
    """Sum of exp(-joint_nll) over every image of the space.

    Returns ``(total, probs)`` where ``probs[i]`` belongs to ``spec.images(i, i+1)``.
    """
    _check_spec(model, spec)
    probs = np.empty(spec.count)
    for lo in range(0, spec.count, chunk):
        hi = min(lo + chunk, spec.count)
        per = joint_nll_batch(model, spec.images(lo, hi), cond)
        probs[lo:hi] = np.exp(-np.array([math.fsum(row) for row in per]))
    return math.fsum(probs.tolist()), probs


# -- causality ----------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    source: tuple[int, int, int]  # (channel, row, col)
    target: tuple[int, int, int]
    via: str  # "perturbation", "gradient" or "both"

    def __str__(self) -> str:
        return f"target {self.target} depends on forbidden source {self.source} ({self.via})"


@dataclass
class CausalityReport:
    shape: tuple[int, int, int]
    forbidden: np.ndarray  # [target, source] bool
    perturbed: np.ndarray  # [target, source] bool: logits changed
    gradient: np.ndarray  # [target, source] float: d(weighted logits)/d(source)
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def pairs_checked(self) -> int:
        return self.forbidden.size

    @property
    def allowed_nonzero(self) -> int:
        return int(np.count_nonzero((self.gradient != 0) & ~self.forbidden))

    @property
    def agree(self) -> bool:
        """Perturbation and gradient flag the same forbidden pairs."""
        return bool(np.array_equal(self.perturbed & self.forbidden, (self.gradient != 0) & self.forbidden))

    def index(self, channel: int, row: int, col: int) -> int:
        C, H, W = self.shape
        return (channel * H + row) * W + col

    def depends(self, target, source) -> bool:
        """Whether the gradient path from ``source`` to ``target`` is nonzero."""
        return bool(self.gradient[self.index(*target), self.index(*source)] != 0)

    def to_text(self) -> str:
        lines = [
            f"pairs_checked={self.pairs_checked}",
            f"forbidden_pairs={int(self.forbidden.sum())}",
            f"allowed_nonzero={self.allowed_nonzero}",
            f"violations={len(self.violations)}",
            f"agree={int(self.agree)}",
        ]
        lines += [f"violation {v}" for v in self.violations]
        return "\n".join(lines) + "\n"


def dependency_order(model: MultiscaleModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per sub-pixel (group index, unit id, position within unit), each [C, H, W].

    Source ``s`` may influence target ``t`` iff ``g_s < g_t``, or both share a
    group and a unit and ``sec_s < sec_t``. Units: the whole base image, the
    whole corner for type-A (one pass per channel), one MxM patch for type-B.
    """
    cfg = model.config
    C = cfg.channels
    sched = model.schedule
    H, W = sched.target_size
    S = sched.num_scales
    g = np.broadcast_to(sched.group_map(), (C, H, W)).copy()
    unit = np.zeros((C, H, W), dtype=np.int64)
    sec = np.zeros((C, H, W), dtype=np.int64)
    ch = np.arange(C)[:, None, None]
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    for k, grp in enumerate(sched.steps):
        sel = g[0] == k
        stride = 1 << (S - grp.scale)
        r, c = rows[sel] // stride, cols[sel] // stride
        if grp.scale == 0:
            sec[:, sel] = (r * sched.base_size[1] + c)[None] * C + ch[:, :, 0]
        elif cfg.upscaler.kind == "A":
            sec[:, sel] = np.broadcast_to(ch[:, :, 0], (C, r.size))
        else:
            m = cfg.upscaler.patch
            i, j = r // 2, c // 2
            gw = sched.scale_size(grp.scale)[1] // 2
            unit[:, sel] = (i // m) * (gw // m) + j // m
            sec[:, sel] = ((i % m) * m + j % m)[None] * C + ch[:, :, 0]
    return g, unit, sec


def forbidden_pairs(model: MultiscaleModel) -> np.ndarray:
    g, unit, sec = (a.ravel() for a in dependency_order(model))
    allowed = (g[None, :] < g[:, None]) | (
        (g[None, :] == g[:, None]) & (unit[None, :] == unit[:, None]) & (sec[None, :] < sec[:, None])
    )
    return ~allowed


def _target_index_maps(model: MultiscaleModel, blocks) -> list[np.ndarray]:
    """For each block, [entries, h, w] flat target sub-pixel index of every logit row."""
    H, W = model.schedule.target_size
    S = model.num_scales
    out = []
    for block in blocks:
        _, _, h, w = block.logits.shape
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        maps = []
        for grp, k in block.entries:
            if grp.scale == 0:
                stride = 1 << S
                r, c = ii * stride, jj * stride
            else:
                stride = 1 << (S - grp.scale)
                dr, dc = grp.corner.offset
                r, c = (2 * ii + dr) * stride, (2 * jj + dc) * stride
            maps.append((k * H + r) * W + c)
        out.append(np.stack(maps))
    return out


def causality_probe(
    model: MultiscaleModel, cond: Optional[Conditioning] = None, seed: int = 0, image: Optional[np.ndarray] = None
) -> CausalityReport:
    """Check every (source, target) sub-pixel pair two ways.

    Perturbation: flip each source to another level and compare all logits
    bit-for-bit. Gradient: replicate the image once per target sub-pixel and
    backpropagate a random weighting of that target's logits in its own batch
    row, giving the full Jacobian in one backward pass.
    """
    cfg = model.config
    C, K = cfg.channels, cfg.levels
    H, W = model.schedule.target_size
    n = C * H * W
    rng = np.random.default_rng(seed)
    img = rng.integers(0, K, size=(C, H, W)) if image is None else np.asarray(image, dtype=np.int64)
    forbidden = forbidden_pairs(model)

    def batched_cond(b):
        if cond is None:
            return None
        return Conditioning(
            None if cond.class_id is None else np.repeat(np.asarray(cond.class_id).reshape(-1)[:1], b),
            None if cond.spatial is None else np.broadcast_to(np.asarray(cond.spatial), (b, *np.shape(cond.spatial))),
        )

    # perturbation: row 0 is the reference, row 1+v has sub-pixel v flipped
    batch = np.repeat(img[None], n + 1, axis=0)
    flat = batch.reshape(n + 1, n)
    flat[1 + np.arange(n), np.arange(n)] = (flat[0] + 1) % K
    with no_grad():
        blocks = model.factor_blocks(Tensor(normalize_levels(batch, K)), batch, batched_cond(n + 1))
    perturbed = np.zeros((n, n), dtype=bool)
    for block, tmap in zip(blocks, _target_index_maps(model, blocks)):
        e = len(block.entries)
        lg = block.logits.data.reshape(e, n + 1, K, *block.logits.shape[2:])
        changed = np.any(lg[:, 1:] != lg[:, :1], axis=2)  # [e, source, h, w]
        for j in range(e):
            t = tmap[j].ravel()
            perturbed[t] |= changed[j].reshape(n, -1).T

    # gradient: row b carries target sub-pixel b
    reps = np.repeat(img[None], n, axis=0)
    x = Tensor(normalize_levels(reps, K), requires_grad=True)
    blocks = model.factor_blocks(x, reps, batched_cond(n))
    wk = rng.uniform(0.5, 1.5, size=K) * rng.choice([-1.0, 1.0], size=K)
    total = None
    for block, tmap in zip(blocks, _target_index_maps(model, blocks)):
        e = len(block.entries)
        weight = np.zeros((e, n, K, *block.logits.shape[2:]))
        hh, ww = np.indices(tmap.shape[1:]).reshape(2, -1)
        for j in range(e):
            weight[j, tmap[j][hh, ww], :, hh, ww] = wk
        term = sum_all(mul(block.logits, Tensor(weight.reshape(block.logits.shape))))
        total = term if total is None else _ops.add(total, term)
    total.backward()
    gradient = x.grad.reshape(n, n)

    report = CausalityReport((C, H, W), forbidden, perturbed, gradient)
    bad_p = perturbed & forbidden
    bad_g = (gradient != 0) & forbidden
    for t, s in zip(*np.nonzero(bad_p | bad_g)):
        via = "both" if bad_p[t, s] and bad_g[t, s] else ("perturbation" if bad_p[t, s] else "gradient")
        unr = lambda i: tuple(int(v) for v in np.unravel_index(i, (C, H, W)))  # noqa: E731
        report.violations.append(Violation(unr(s), unr(t), via))
    return report


def inject_mask_fault(model: MultiscaleModel, layer: Optional[str] = None, weight: float = 0.5) -> str:
    """Test fixture: open one closed mask bit (and give it a weight).

    Defaults to the centre tap of the first masked layer, which lets a
    sub-pixel see itself. Returns the layer name.
    """
    masks = model.masks()
    if not masks:
        raise ValueError("model has no masked layers")
    name = layer or next(iter(masks))
    mask = masks[name]
    o, i, kh, kw = mask.shape
    closed = np.argwhere(mask[:, :, kh // 2, kw // 2] == 0)
    if closed.size:
        oo, ii = closed[0]
        idx = (oo, ii, kh // 2, kw // 2)
    else:
        idx = tuple(np.argwhere(mask == 0)[0])
    mask[idx] = 1.0
    model.params[f"{name}/w"].data[idx] = weight
    return name


# -- gradient check -----------------------------------------------------------


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst: str
    checked: int
    skipped: int

    def to_text(self) -> str:
        return (
            f"max_rel_error={self.max_rel_error:.3e}\nworst={self.worst}\nchecked={self.checked}\nskipped={self.skipped}\n"
        )


GradFactory = Callable[[int], tuple[Mapping[str, Tensor], Callable[[], Tensor]]]


def _watched(loss_fn) -> tuple[float, list[np.ndarray]]:
    prev = _ops._relu_watch
    _ops._relu_watch = []
    try:
        with no_grad():
            v = float(loss_fn().data)
        return v, _ops._relu_watch
    finally:
        _ops._relu_watch = prev


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(factory: GradFactory, seed: int = 0, h: float = 1e-5, floor: float = 1e-4) -> GradcheckResult:
    """Central differences against autodiff over every parameter entry.

    Error is ``|a - n| / max(|a|, |n|, floor)``. Entries whose +-h probes move
    a relu across its kink are skipped (finite differences are invalid there)
    and counted in ``skipped``.
    """
    params, loss_fn = factory(seed)
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros(p.shape)) for k, p in params.items()}
    _, ref = _watched(loss_fn)
    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    for name, p in params.items():
        for idx in np.ndindex(*p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            fp, pat_p = _watched(loss_fn)
            p.data[idx] = orig - h
            fm, pat_m = _watched(loss_fn)
            p.data[idx] = orig
            if not (_same_pattern(ref, pat_p) and _same_pattern(ref, pat_m)):
                skipped += 1
                continue
            a, nd = analytic[name][idx], (fp - fm) / (2 * h)
            err = abs(a - nd) / max(abs(a), abs(nd), floor)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}{list(idx)}"
    return GradcheckResult(worst, worst_name, checked, skipped)


# -- stock factories ----------------------------------------------------------


def linear_factory(seed: int):
    """1x1 conv on a fixed input with a linear readout."""
    from pyrpix.tensor import conv2d

    rng = np.random.default_rng(seed)
    # positive input and readout keep every gradient O(1)
    x = Tensor(rng.uniform(0.5, 1.5, (1, 3, 2, 2)))
    w = Tensor(rng.standard_normal((4, 3, 1, 1)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    r = Tensor(rng.uniform(0.5, 1.5, (1, 4, 2, 2)))
    return {"w": w, "b": b}, lambda: sum_all(mul(conv2d(x, w, b), r))


def masked_stack_factory(seed: int, channels: int = 3, levels: int = 4):
    """Small mask-A/mask-B stack with a softmax cross-entropy loss."""
    from pyrpix.network.layers import ParamStore
    from pyrpix.network.pixelcnn import PixelCNN
    from pyrpix.tensor import reshape, softmax_xent, transpose

    store = ParamStore(seed)
    net = PixelCNN(store, "net", channels=channels, levels=levels, layers=2, hidden=6, kernel=3, first_kernel=3)
    for p in store.values():
        p.data += 0.1 * store.rng.standard_normal(p.shape) * (p.data != 0 if p.data.ndim == 4 else 1)
    rng = np.random.default_rng(seed + 1)
    lv = rng.integers(0, levels, size=(2, channels, 4, 4))
    x = Tensor(normalize_levels(lv, levels))

    def loss():
        out = net(x)  # [B, C*K, h, w]
        B, _, hh, ww = out.shape
        rows = reshape(transpose(reshape(out, (B, channels, levels, hh, ww)), (0, 1, 3, 4, 2)), (-1, levels))
        return softmax_xent(rows, lv.reshape(-1))[0]

    return store.as_dict(), loss


def residual_factory(seed: int):
    """One pre-activation residual block with a quadratic readout."""
    from pyrpix.network.layers import ParamStore
    from pyrpix.network.upscaler import ResNetTrunk

    store = ParamStore(seed)
    trunk = ResNetTrunk(store, "res", 2, 4, 1, num_embed=2)
    store["res/embed"].data[:] = store.rng.standard_normal((2, 4))
    rng = np.random.default_rng(seed + 1)
    x = Tensor(rng.standard_normal((2, 2, 4, 4)))
    ids = np.array([0, 1])
    return store.as_dict(), lambda: sum_all(mul(trunk(x, ids), trunk(x, ids)))


def upscaler_loss_factory(seed: int, kind: str = "A", channels: int = 1):
    """Full teacher-forced loss of a 4x4 -> 8x8 model with tiny widths."""
    from pyrpix.likelihood import nll_loss
    from pyrpix.network.config import make_config

    cfg = make_config(
        (4, 4),
        (8, 8),
        channels,
        4,
        base_layers=1,
        base_hidden=4,
        first_kernel=3,
        kind=kind,
        resnet_layers=1,
        up_hidden=4,
        patch=2,
        shallow_layers=2,
        shallow_hidden=4,
    )
    model = MultiscaleModel(cfg, seed)
    for name, p in model.params.items():
        if name.endswith("embed") or name.endswith("/b"):
            p.data[:] = 0.1 * model.params.rng.standard_normal(p.shape)
    lv = np.random.default_rng(seed + 1).integers(0, 4, size=(2, channels, 8, 8))
    return model.parameters(), lambda: nll_loss(model, lv)[0]
