"""Time the numba-jitted kernels against their plain-numpy twins.

Usage: python benchmarks/bench_kernels.py [--repeats N]

The numbers compare like for like in one process: the plain functions from
aectk.kernels are wrapped with @njit here, warmed up, and both flavors are
timed on identical inputs.
"""

import argparse
import time

import numpy as np

from aectk import kernels

try:
    import numba
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def _timeit(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, py_fn, args, repeats):
    t_py = _timeit(py_fn, args, repeats)
    row = f"{name:<18} numpy {t_py * 1e3:9.2f} ms"
    if HAVE_NUMBA:
        jit_fn = numba.njit(cache=True)(py_fn)
        jit_fn(*args)  # compile outside the timed region
        t_jit = _timeit(jit_fn, args, repeats)
        row += f"   numba {t_jit * 1e3:9.2f} ms   speedup {t_py / t_jit:6.1f}x"
    print(row)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    t_frames, width, hidden = 400, 256, 256
    x = rng.standard_normal((t_frames, width))
    w_in = rng.standard_normal((width, 4 * hidden)) * 0.05
    w_rec = rng.standard_normal((hidden, 4 * hidden)) * 0.05
    bias = np.zeros(4 * hidden)
    bench_case("lstm_forward", kernels.lstm_forward_py,
               (x, w_in, w_rec, bias), args.repeats)

    h, c, gates = kernels.lstm_forward_py(x, w_in, w_rec, bias)
    grad_h = rng.standard_normal(h.shape)
    bench_case("lstm_backward", kernels.lstm_backward_py,
               (x, w_in, w_rec, h, c, gates, grad_h), args.repeats)

    n = 4 * 16000
    far = rng.standard_normal(n) * 0.1
    mic = rng.standard_normal(n) * 0.1
    bench_case("nlms_run", kernels.nlms_run_py, (far, mic, 1024, 0.5, 1e-6),
               args.repeats)

    room = np.array([5.0, 4.0, 3.0])
    src = np.array([1.0, 1.5, 1.2])
    mic_pos = np.array([3.5, 2.5, 1.8])
    betas = np.array([0.75, 0.8, 0.85])
    bench_case("image_source", kernels.image_source_taps_py,
               (room, src, mic_pos, betas, 4800, 16000.0, 343.0), args.repeats)

    if not HAVE_NUMBA:
        print("numba not installed: only the numpy flavor was timed")


if __name__ == "__main__":
    main()
