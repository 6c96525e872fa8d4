"""Time the compiled and pure-Python DP kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from cidnst import kernels


def ctc_case(rng, L, n, K):
    z = rng.normal(size=(L, K))
    logp = z - np.logaddexp.reduce(z, axis=1, keepdims=True)
    labels = rng.integers(0, K - 1, size=n)
    return logp, labels, K - 1


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = {
        "ctc L=12 |y|=10 V=25": [ctc_case(rng, 12, 10, 25) for _ in range(64)],
        "ctc L=60 |y|=25 V=25": [ctc_case(rng, 60, 25, 25) for _ in range(64)],
        "levenshtein 12x12": [(rng.integers(0, 20, 12), rng.integers(0, 20, 12)) for _ in range(500)],
        "levenshtein 60x60": [(rng.integers(0, 20, 60), rng.integers(0, 20, 60)) for _ in range(200)],
    }
    print(f"{'case':<24}" + "".join(f"{b:>12}" for b in sorted(kernels.BACKENDS)) + "     speedup")
    for name, inputs in cases.items():
        row = {}
        for backend in sorted(kernels.BACKENDS):
            if name.startswith("ctc"):
                fn = lambda: [kernels.ctc_forward_backward(*c, backend=backend) for c in inputs]
            else:
                fn = lambda: [kernels.levenshtein_align(a, b, backend=backend) for a, b in inputs]
            row[backend] = best_of(fn, args.repeat)
        cells = "".join(f"{row[b] * 1e3:>10.2f}ms" for b in sorted(row))
        speed = f"{row['python'] / row['cython']:>10.1f}x" if "cython" in row else "         -"
        print(f"{name:<24}{cells}{speed}")


if __name__ == "__main__":
    main()
