"""Time the compiled kernels against the numpy fallback and check they agree.

Usage: python3 benchmarks/bench_kernels.py [--sizes 200 500 1000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from regimefit import _kernels_py

try:
    from regimefit import _kernels as compiled
except ImportError:
    compiled = None


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[200, 500, 1000])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--p", type=int, default=2)
    parser.add_argument("--k", type=int, default=3)
    args = parser.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")
        return 1

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'n':>6}{'python s':>12}{'cython s':>12}{'speedup':>10}{'max diff':>12}")
    for n in args.sizes:
        t = np.linspace(0, 5, n)
        x = np.sin(2 * t) + rng.normal(size=n)
        m = args.p + 2
        tp, rss_py = best_time(lambda: _kernels_py.segment_rss_table(t, x, args.p, m), args.repeat)
        tc, rss_c = best_time(lambda: compiled.segment_rss_table(t, x, args.p, m), args.repeat)
        ok = np.isfinite(rss_py)
        diff = float(np.max(np.abs(rss_py[ok] - rss_c[ok]) / np.maximum(1.0, rss_py[ok])))
        print(f"{'segment_rss_table':<18}{n:>6}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}{diff:>12.1e}")

        cost = np.where(ok, rss_py, np.inf)
        tp, (b_py, k_py) = best_time(lambda: _kernels_py.dp_sweep(cost, args.k), args.repeat)
        tc, (b_c, k_c) = best_time(lambda: compiled.dp_sweep(cost, args.k), args.repeat)
        same = np.array_equal(k_py, k_c)
        print(f"{'dp_sweep':<18}{n:>6}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}{'same' if same else 'DIFFER':>12}")

        e = rng.uniform(1e-3, 1.0, size=(n, args.k))
        A = np.triu(rng.uniform(size=(args.k, args.k)))
        A /= A.sum(axis=1, keepdims=True)
        pi = np.eye(args.k)[0]
        tp, fb_py = best_time(lambda: _kernels_py.forward_backward(e, pi, A), args.repeat)
        tc, fb_c = best_time(lambda: compiled.forward_backward(e, pi, A), args.repeat)
        diff = max(float(np.max(np.abs(u - v))) for u, v in zip(fb_py, fb_c))
        print(f"{'forward_backward':<18}{n:>6}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
