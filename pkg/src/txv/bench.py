"""Benchmark the compiled kernels against the numpy fallback.

Run with ``python -m txv.bench``. Prints per-kernel timings for both
backends on sizes representative of training and retrieval.
"""

import time

import numpy as np

from .backend import BACKEND, _ckernels_available, py_kernels

SIZES = [
    ("batch projection 32x512 -> 64", (32, 512), (64, 512)),
    ("gallery projection 1000x512 -> 64", (1000, 512), (64, 512)),
    ("cosine grid 128x2048 @ 2048x128", (128, 2048), (128, 2048)),
]


def _time(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run() -> None:
    rng = np.random.default_rng(0)
    impls = [("py", py_kernels)]
    if _ckernels_available():
        from . import backend

        impls.append(("c", backend._impl))
    print(f"active backend: {BACKEND}")
    for label, xshape, wshape in SIZES:
        x = rng.standard_normal(xshape)
        w = rng.standard_normal(wshape)
        b = rng.standard_normal(wshape[0])
        print(label)
        for name, impl in impls:
            if "cosine" in label:
                t = _time(impl.matmul, x, w.T)
                print(f"  {name}: matmul      {t * 1e3:8.2f} ms")
            else:
                t = _time(impl.linear_relu, x, w, b)
                print(f"  {name}: linear_relu {t * 1e3:8.2f} ms")


if __name__ == "__main__":
    run()
