"""Benchmark the compiled kernels against the NumPy fallback.

Run:  python benchmarks/bench_kernels.py
The shapes mirror actual workloads: param2stroke training convolutions and
full-canvas stroke placement during plan optimization.
"""

import time

import numpy as np

from easel import kernels_numpy

try:
    from easel import _fastkernels
except ImportError:
    _fastkernels = None


def _time(fn, repeats=20):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def _row(label, make_calls):
    numpy_call, fast_call = make_calls
    t_numpy = _time(numpy_call)
    if fast_call is None:
        print(f"{label:42s} numpy {t_numpy * 1e3:8.3f} ms   compiled      n/a")
        return
    t_fast = _time(fast_call)
    print(f"{label:42s} numpy {t_numpy * 1e3:8.3f} ms   compiled "
          f"{t_fast * 1e3:8.3f} ms   speedup {t_numpy / t_fast:5.1f}x")


def main():
    rng = np.random.default_rng(0)
    cases = []

    # training-shaped convolution: a 128-stroke batch of seed maps
    x = np.ascontiguousarray(rng.normal(size=(128, 8, 8, 16)))
    k = np.ascontiguousarray(rng.normal(size=(1, 8, 3, 3)))
    g = np.ascontiguousarray(rng.normal(size=(128, 1, 8, 16)))
    cases.append(("conv2d fwd (128, 8, 8, 16) * (1, 8, 3, 3)",
                  (lambda: kernels_numpy.conv2d_forward(x, k),
                   (lambda: _fastkernels.conv2d_forward(x, k))
                   if _fastkernels else None)))
    cases.append(("conv2d bwd same shapes",
                  (lambda: kernels_numpy.conv2d_backward(x, k, g),
                   (lambda: _fastkernels.conv2d_backward(x, k, g))
                   if _fastkernels else None)))

    # placement-shaped sampling: one stroke stamp onto a 128x128 canvas
    img = np.ascontiguousarray(rng.uniform(size=(32, 64)))
    theta = np.array([0.31, -0.12, 4.7, 0.09, 0.27, -3.1])
    gout = np.ascontiguousarray(rng.normal(size=(128, 128)))
    cases.append(("affine_sample fwd (32, 64) -> (128, 128)",
                  (lambda: kernels_numpy.affine_sample_forward(img, theta, 128, 128),
                   (lambda: _fastkernels.affine_sample_forward(img, theta, 128, 128))
                   if _fastkernels else None)))
    cases.append(("affine_sample bwd same shapes",
                  (lambda: kernels_numpy.affine_sample_backward(img, theta, gout),
                   (lambda: _fastkernels.affine_sample_backward(img, theta, gout))
                   if _fastkernels else None)))

    if _fastkernels is None:
        print("compiled extension not available; showing NumPy timings only\n")
    for label, calls in cases:
        _row(label, calls)


if __name__ == "__main__":
    main()
