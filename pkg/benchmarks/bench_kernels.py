"""Compare the pure numpy kernels against the compiled extension.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]

Times the three hot kernels on shapes typical for this package (short token
sequences, small embeddings, population-sized noise reductions) and prints a
per-kernel speedup table.
"""

import argparse
import time

import numpy as np

from esdt.kernels import pure

try:
    from esdt.kernels import _fastcore
except ImportError:
    _fastcore = None


def timeit(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, make_args, call, repeats):
    args = make_args()
    t_pure = timeit(lambda: call(pure, *args), repeats)
    if _fastcore is None:
        print(f"{name:<42} pure {t_pure * 1e6:9.1f} us   compiled (not built)")
        return
    t_fast = timeit(lambda: call(_fastcore, *args), repeats)
    print(
        f"{name:<42} pure {t_pure * 1e6:9.1f} us   "
        f"compiled {t_fast * 1e6:9.1f} us   x{t_pure / t_fast:5.2f}"
    )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    print("kernel benchmark (best of", args.repeats, "runs)")

    for t, d in [(12, 16), (24, 32), (96, 64)]:
        x = rng.standard_normal((t, d))
        g, b = rng.standard_normal(d), rng.standard_normal(d)
        bench_case(
            f"layer_norm T={t} D={d}",
            lambda x=x, g=g, b=b: (x, g, b),
            lambda mod, x, g, b: mod.layer_norm(x, g, b),
            args.repeats,
        )

    for t, d, h in [(12, 16, 2), (24, 32, 4), (96, 64, 4)]:
        q, k, v = (rng.standard_normal((t, d)) for _ in range(3))
        bench_case(
            f"causal_attention T={t} D={d} heads={h}",
            lambda q=q, k=k, v=v, h=h: (q, k, v, h),
            lambda mod, q, k, v, h: mod.causal_attention(q, k, v, h),
            args.repeats,
        )

    table = rng.standard_normal(1 << 20)
    for n, dim in [(100, 5000), (500, 5000), (1000, 100_000)]:
        offsets = rng.integers(0, len(table) - dim, size=n).astype(np.int64)
        signs = rng.choice([-1.0, 1.0], size=n)
        weights = rng.standard_normal(n)
        bench_case(
            f"weighted_noise_sum n={n} dim={dim}",
            lambda o=offsets, s=signs, w=weights, d=dim: (table, o, s, w, d, 1000),
            lambda mod, t, o, s, w, d, bs: mod.weighted_noise_sum(t, o, s, w, d, bs),
            max(5, args.repeats // 20),
        )


if __name__ == "__main__":
    main()
