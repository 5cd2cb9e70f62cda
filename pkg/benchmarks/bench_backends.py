"""Time the compiled LSTM sequence kernels against the pure-Python fallback.

Runs the forward and forward+backward passes of both backends on identical
random inputs, reports per-call milliseconds and the speedup, and
cross-checks that the two implementations agree numerically.

Usage:
    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --units 256 --steps 30 --repeats 200
"""

import argparse
import sys
import time

import numpy as np

from advlip._kernels import _reference
from advlip.tensor import Rng

try:
    from advlip._kernels import _native
except ImportError:
    _native = None


def make_inputs(units, steps, dtype, seed):
    rng = Rng(seed, "init")
    zx = rng.normal((steps, 4 * units), std=0.5).astype(dtype)
    wh = rng.normal((units, 4 * units), std=0.1).astype(dtype)
    h0 = np.zeros(units, dtype=dtype)
    c0 = np.zeros(units, dtype=dtype)
    dhs = rng.normal((steps, units), std=0.5).astype(dtype)
    return zx, wh, h0, c0, dhs


def run_once(mod, inputs):
    zx, wh, h0, c0, dhs = inputs
    hs, gates, tanh_c, c_prev = mod.lstm_seq_forward(zx, wh, h0, c0)
    dz, dh0, dc0 = mod.lstm_seq_backward(dhs, gates, tanh_c, c_prev, wh)
    return hs, dz


def time_call(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return 1000.0 * (time.perf_counter() - start) / repeats


def bench(mod, inputs, repeats):
    zx, wh, h0, c0, dhs = inputs
    fwd = time_call(lambda: mod.lstm_seq_forward(zx, wh, h0, c0), repeats)
    both = time_call(lambda: run_once(mod, inputs), repeats)
    return fwd, both


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--units", type=int, default=256)
    parser.add_argument("--steps", type=int, default=30)
    parser.add_argument("--repeats", type=int, default=100)
    parser.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    inputs = make_inputs(args.units, args.steps, np.dtype(args.dtype), args.seed)
    print(
        f"LSTM sequence kernel, units={args.units} steps={args.steps} "
        f"dtype={args.dtype} repeats={args.repeats}"
    )

    ref_fwd, ref_both = bench(_reference, inputs, args.repeats)
    print(f"  reference  forward {ref_fwd:8.3f} ms   forward+backward {ref_both:8.3f} ms")

    if _native is None:
        print("  native     not built (pip install -e . compiles it)")
        return 0

    nat_fwd, nat_both = bench(_native, inputs, args.repeats)
    print(f"  native     forward {nat_fwd:8.3f} ms   forward+backward {nat_both:8.3f} ms")
    print(f"  speedup    forward {ref_fwd / nat_fwd:7.2f}x   forward+backward {ref_both / nat_both:7.2f}x")

    ref_hs, ref_dz = run_once(_reference, inputs)
    nat_hs, nat_dz = run_once(_native, inputs)
    gap = max(
        float(np.max(np.abs(ref_hs - nat_hs))),
        float(np.max(np.abs(ref_dz - nat_dz))),
    )
    tol = 1e-5 if args.dtype == "float32" else 1e-12
    print(f"  agreement  max abs diff {gap:.2e} (tolerance {tol:.0e})")
    return 0 if gap <= tol else 1


if __name__ == "__main__":
    sys.exit(main())
