"""Stride-1 2-D convolution kernels.

Three implementations share one calling convention:

* :func:`conv2d_reference` -- a plain six-deep loop nest, used only as a test
  oracle.
* :class:`NumpyBackend` -- im2col through ``sliding_window_view`` and BLAS.
* ``pyrpix.tensor._convcore`` -- compiled direct loops (Cython/OpenMP).

The compiled core is preferred when it imports; ``PYRPIX_BACKEND=numpy``
forces the fallback. All kernels take an already-masked weight.
"""
from __future__ import annotations

import logging
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)


def padding_amount(padding: str, kh: int, kw: int) -> tuple[int, int]:
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("'same' padding requires odd kernel extents")
        return kh // 2, kw // 2
    if padding == "valid":
        return 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def conv2d_reference(x, w, b, ph: int, pw: int) -> np.ndarray:
    """Direct loop-nest convolution (cross-correlation) with zero fill."""
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    Ho, Wo = H + 2 * ph - kh + 1, W + 2 * pw - kw + 1
    out = np.zeros((B, Cout, Ho, Wo))
    for n in range(B):
        for o in range(Cout):
            for y in range(Ho):
                for xx in range(Wo):
                    acc = float(b[o])
                    for c in range(Cin):
                        for i in range(kh):
                            for j in range(kw):
                                r, s = y + i - ph, xx + j - pw
                                if 0 <= r < H and 0 <= s < W:
                                    acc += w[o, c, i, j] * x[n, c, r, s]
                    out[n, o, y, xx] = acc
    return out


class NumpyBackend:
    name = "numpy"

    @staticmethod
    def _windows(x, kh, kw, ph, pw):
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
        return sliding_window_view(xp, (kh, kw), axis=(2, 3))  # B,C,Ho,Wo,kh,kw

    def forward(self, x, w, b, ph, pw):
        kh, kw = w.shape[2:]
        win = self._windows(x, kh, kw, ph, pw)
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B,Ho,Wo,O
        out += b
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def grad_input(self, gy, w, ph, pw, in_hw):
        kh, kw = w.shape[2:]
        H, W = in_hw
        qh, qw = kh - 1 - ph, kw - 1 - pw
        wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        if qh < 0 or qw < 0:
            raise ValueError("padding larger than kernel-1 is not supported")
        win = self._windows(gy, kh, kw, qh, qw)
        gx = np.tensordot(win, wt, axes=([1, 4, 5], [1, 2, 3]))
        gx = gx.transpose(0, 3, 1, 2)
        return np.ascontiguousarray(gx[:, :, :H, :W])

    def grad_weight(self, gy, x, kh, kw, ph, pw):
        win = self._windows(x, kh, kw, ph, pw)
        return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))  # O,C,kh,kw


class CompiledBackend:
    name = "compiled"

    def __init__(self, module, threads: int):
        self._m = module
        self.threads = threads

    def forward(self, x, w, b, ph, pw):
        return self._m.conv_forward(
            np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(b), ph, pw, self.threads
        )

    def grad_input(self, gy, w, ph, pw, in_hw):
        return self._m.conv_grad_input(
            np.ascontiguousarray(gy), np.ascontiguousarray(w), ph, pw, in_hw[0], in_hw[1], self.threads
        )

    def grad_weight(self, gy, x, kh, kw, ph, pw):
        return self._m.conv_grad_weight(
            np.ascontiguousarray(gy), np.ascontiguousarray(x), kh, kw, ph, pw, self.threads
        )


def _thread_cap() -> int:
    raw = os.environ.get("PYRPIX_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer PYRPIX_THREADS=%r", raw)
        return 1


def _select():
    if os.environ.get("PYRPIX_BACKEND", "").lower() == "numpy":
        return NumpyBackend()
    try:
        from pyrpix.tensor import _convcore
    except ImportError:
        logger.debug("compiled conv core unavailable, using numpy fallback")
        return NumpyBackend()
    return CompiledBackend(_convcore, _thread_cap())


_backend = _select()


def get_backend():
    return _backend


def set_backend(name: str):
    """Switch kernels at runtime ('numpy' or 'compiled'); returns the previous one."""
    global _backend
    prev = _backend
    if name == "numpy":
        _backend = NumpyBackend()
    elif name == "compiled":
        from pyrpix.tensor import _convcore

        _backend = CompiledBackend(_convcore, _thread_cap())
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def backend_name() -> str:
    return _backend.name
