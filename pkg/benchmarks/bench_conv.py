"""Compiled conv core vs the numpy fallback on training- and sampling-sized shapes.

    python3 benchmarks/bench_conv.py [--repeats N]
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from pyrpix.tensor import conv

SHAPES = [
    # (batch, in, out, size, kernel)
    (1, 1, 16, 4, 7),
    (1, 16, 16, 16, 3),
    (1, 16, 16, 32, 3),
    (16, 4, 16, 8, 3),
    (16, 16, 16, 8, 3),
    (64, 16, 16, 16, 3),
]


def _time(fn, repeats: int) -> float:
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()
    try:
        from pyrpix.tensor import _convcore
    except ImportError:
        raise SystemExit("compiled core not built; reinstall without PYRPIX_NO_EXT") from None
    backends = {"numpy": conv.NumpyBackend(), "compiled": conv.CompiledBackend(_convcore, conv._thread_cap())}
    rng = np.random.default_rng(0)
    print(f"{'shape (B,Cin,Cout,HW,k)':<26}{'pass':<12}{'numpy ms':>10}{'compiled ms':>13}{'ratio':>8}")
    for B, ci, co, hw, k in SHAPES:
        x = rng.standard_normal((B, ci, hw, hw))
        w = rng.standard_normal((co, ci, k, k))
        b = rng.standard_normal(co)
        gy = rng.standard_normal((B, co, hw, hw))
        p = k // 2
        passes = {
            "forward": lambda be: be.forward(x, w, b, p, p),
            "grad_input": lambda be: be.grad_input(gy, w, p, p, (hw, hw)),
            "grad_weight": lambda be: be.grad_weight(gy, x, k, k, p, p),
        }
        for name, fn in passes.items():
            t = {n: _time(lambda: fn(be), args.repeats) for n, be in backends.items()}
            print(
                f"{str((B, ci, co, hw, k)):<26}{name:<12}{t['numpy'] * 1e3:>10.3f}"
                f"{t['compiled'] * 1e3:>13.3f}{t['numpy'] / t['compiled']:>8.2f}"
            )


if __name__ == "__main__":
    main()
