"""Time the compiled directional attention kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints per-call forward and backward timings for a few (d, n) sizes and checks
that the two backends agree.
"""

import argparse
import time

import numpy as np

from disan import _kernels_py

try:
    from disan import _kernels as compiled
except ImportError:
    compiled = None

SIZES = ((32, 16), (64, 32), (300, 20), (300, 50))


def case(d, n, rng):
    a, b, v = (np.ascontiguousarray(rng.normal(size=(d, n))) for _ in range(3))
    bias = rng.normal(size=d)
    i, j = np.arange(n)[:, None], np.arange(n)[None, :]
    mask = np.ascontiguousarray(np.where(i < j, 0.0, -np.inf))
    return a, b, bias, v, mask


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_kernel(impl, d, n, repeat, rng):
    a, b, bias, v, mask = case(d, n, rng)
    s, probs, th = impl.t2t_forward(a, b, bias, v, mask, 5.0)
    g = np.ascontiguousarray(rng.normal(size=s.shape))
    fwd = best_of(lambda: impl.t2t_forward(a, b, bias, v, mask, 5.0), repeat)
    bwd = best_of(lambda: impl.t2t_backward(g, probs, th, v), repeat)
    return fwd, bwd


def check_agreement(rng):
    a, b, bias, v, mask = case(16, 9, rng)
    ref = _kernels_py.t2t_forward(a, b, bias, v, mask, 5.0)
    out = compiled.t2t_forward(a, b, bias, v, mask, 5.0)
    g = np.ascontiguousarray(rng.normal(size=ref[0].shape))
    back_ref = _kernels_py.t2t_backward(g, ref[1], ref[2], v)
    back = compiled.t2t_backward(g, ref[1], ref[2], v)
    return max(float(np.abs(x - y).max()) for x, y in zip(ref + back_ref, out + back))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    if compiled is None:
        print("compiled extension not built; only the numpy fallback is timed")
    else:
        print(f"max |compiled - python| = {check_agreement(rng):.2e}")
    print(f"{'d':>5} {'n':>4} {'python fwd':>12} {'python bwd':>12} {'compiled fwd':>13} {'compiled bwd':>13} {'speedup':>8}")
    for d, n in SIZES:
        pf, pb = bench_kernel(_kernels_py, d, n, args.repeat, rng)
        if compiled is None:
            print(f"{d:>5} {n:>4} {pf * 1e3:>10.3f}ms {pb * 1e3:>10.3f}ms")
            continue
        cf, cb = bench_kernel(compiled, d, n, args.repeat, rng)
        print(f"{d:>5} {n:>4} {pf * 1e3:>10.3f}ms {pb * 1e3:>10.3f}ms {cf * 1e3:>11.3f}ms "
              f"{cb * 1e3:>11.3f}ms {(pf + pb) / (cf + cb):>7.1f}x")


if __name__ == "__main__":
    main()
