"""Differentiable operators used by the networks.

Broadcasting is deliberately narrow: equal shapes, or a Python scalar with a
tensor. Per-channel biases go through :func:`add_channel_bias`.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from pyrpix.tensor import conv as _conv
from pyrpix.tensor.core import DimensionError, Tensor, as_tensor, make_result

# relu sign patterns are appended here while a gradcheck is watching for kinks
_relu_watch: Optional[list] = None


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor,
    mask: Optional[np.ndarray] = None,
    padding: str = "same",
) -> Tensor:
    """Stride-1 cross-correlation with an optional binary kernel mask.

    The effective kernel is ``kernel * mask``; the kernel gradient is
    multiplied by the mask, so masked-out entries receive exactly 0.0.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and kernel")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    if bias.shape != (kernel.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} != ({kernel.shape[0]},)")
    kh, kw = kernel.shape[2:]
    ph, pw = _conv.padding_amount(padding, kh, kw)
    if mask is not None:
        if mask.shape != kernel.shape:
            raise DimensionError(f"mask shape {mask.shape} != kernel shape {kernel.shape}")
        w = kernel.data * mask
    else:
        w = kernel.data
    backend = _conv.get_backend()
    out = backend.forward(x.data, w, bias.data, ph, pw)
    in_hw = x.shape[2:]

    def backward(g):
        gx = backend.grad_input(g, w, ph, pw, in_hw) if x.requires_grad else None
        gk = None
        if kernel.requires_grad:
            gk = backend.grad_weight(g, x.data, kh, kw, ph, pw)
            if mask is not None:
                gk = gk * mask
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return gx, gk, gb

    return make_result(out, "conv2d", (x, kernel, bias), backward)


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return make_result(a.data + float(b), "add", (a,), lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    _check_same(a, b, "add")
    return make_result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    if not isinstance(a, Tensor):
        return scale(b, a)
    _check_same(a, b, "mul")
    return make_result(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return make_result(a.data * s, "scale", (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    if _relu_watch is not None:
        _relu_watch.append(pos)
    return make_result(np.where(pos, a.data, 0.0), "relu", (a,), lambda g: (np.where(pos, g, 0.0),))


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: relu, add, mul, scale."""
    fn = {"relu": relu, "add": add, "mul": mul, "scale": scale}.get(op)
    if fn is None:
        raise ValueError(f"unknown elementwise op {op!r}")
    return fn(*args)


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[B,C,H,W] + bias[C] or bias[B,C], broadcast over space."""
    if bias.data.ndim == 1:
        if bias.shape[0] != x.shape[1]:
            raise DimensionError(f"bias {bias.shape} does not match channels of {x.shape}")
        out = x.data + bias.data[None, :, None, None]
        return make_result(out, "add_channel_bias", (x, bias), lambda g: (g, g.sum(axis=(0, 2, 3))))
    if bias.shape != x.shape[:2]:
        raise DimensionError(f"bias {bias.shape} does not match {x.shape[:2]}")
    out = x.data + bias.data[:, :, None, None]
    return make_result(out, "add_channel_bias", (x, bias), lambda g: (g, g.sum(axis=(2, 3))))


def embedding(table: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``index``."""
    index = np.asarray(index, dtype=np.int64)
    n = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"embedding index out of range [0, {n})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        return (gt,)

    return make_result(table.data[index], "embedding", (table,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_result(out, "concat", tensors, backward)


def channel_slice(x: Tensor, lo: int, hi: int) -> Tensor:
    out = np.ascontiguousarray(x.data[:, lo:hi])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, lo:hi] = g
        return (gx,)

    return make_result(out, "channel_slice", (x,), backward)


def strided_slice(x: Tensor, r0: int, c0: int, step: int) -> Tensor:
    """x[..., r0::step, c0::step] on the last two axes."""
    out = np.ascontiguousarray(x.data[..., r0::step, c0::step])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., r0::step, c0::step] = g
        return (gx,)

    return make_result(out, "strided_slice", (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    return make_result(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_result(out, "transpose", (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def to_patches(x: Tensor, m: int) -> Tensor:
    """[B,C,H,W] -> [B*(H/m)*(W/m), C, m, m], patches in row-major order."""
    B, C, H, W = x.shape
    if H % m or W % m:
        raise DimensionError(f"spatial dims {(H, W)} not divisible by patch {m}")
    t = reshape(x, (B, C, H // m, m, W // m, m))
    t = transpose(t, (0, 2, 4, 1, 3, 5))
    return reshape(t, (B * (H // m) * (W // m), C, m, m))


def from_patches(p: Tensor, batch: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`to_patches`."""
    _, C, m, _ = p.shape
    t = reshape(p, (batch, h // m, w // m, C, m, m))
    t = transpose(t, (0, 3, 1, 4, 2, 5))
    return reshape(t, (batch, C, h, w))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_result(np.array(x.data.sum()), "sum", (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Max-stabilised log-softmax over the last axis (no graph)."""
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_xent(logits: Tensor, targets) -> tuple[Tensor, Tensor]:
    """Cross-entropy in nats for logits[N,K] against integer targets[N].

    Returns ``(mean_loss, per_item)``.
    """
    if logits.data.ndim != 2:
        raise DimensionError("softmax_xent expects [N, K] logits")
    N, K = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != N:
        raise DimensionError(f"{targets.shape[0]} targets for {N} rows")
    if N and (targets.min() < 0 or targets.max() >= K):
        raise IndexError(f"target outside [0, {K})")
    logp = log_softmax_rows(logits.data)
    rows = np.arange(N)
    per = -logp[rows, targets]

    def backward(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (p * g[:, None],)

    per_item = make_result(per, "softmax_xent", (logits,), backward)
    return mean(per_item), per_item


def crop2d(x: Tensor, r0: int, c0: int, h: int, w: int) -> Tensor:
    """x[..., r0:r0+h, c0:c0+w]."""
    out = np.ascontiguousarray(x.data[..., r0 : r0 + h, c0 : c0 + w])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., r0 : r0 + h, c0 : c0 + w] = g
        return (gx,)

    return make_result(out, "crop2d", (x,), backward)
