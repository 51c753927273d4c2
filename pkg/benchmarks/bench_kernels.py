"""Time the compiled and pure-Python kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case first checks that both backends agree, then reports the best-of-N
wall time per call and the speedup.
"""

import argparse
import timeit

import numpy as np

from hardmine.kernels import compiled, python


def nn_case(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    points = rng.normal(size=(n, dim))
    ids = np.arange(n, dtype=np.int64)
    query = rng.normal(size=dim)
    excluded = (rng.random(n) < 0.1).astype(np.uint8)
    return (points, ids, query, excluded)


def edt_case(size, seed=0):
    rng = np.random.default_rng(seed)
    return (np.ascontiguousarray(rng.random((size, size)) < 0.3, dtype=np.uint8),)


def bench(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.05:
        number *= 4
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat))
    return best / number


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    cases = [(f"nearest_scan n={n} dim={d}", "nearest_scan", nn_case(n, d))
             for n, d in ((1000, 3), (10000, 3), (10000, 8))]
    cases += [(f"edt_squared {s}x{s}", "edt_squared", edt_case(s)) for s in (12, 28, 64)]

    print(f"{'case':<30} {'python (ms)':>12} {'cython (ms)':>12} {'speedup':>9}")
    for label, name, case in cases:
        py_fn, c_fn = getattr(python, name), getattr(compiled, name)
        a, b = py_fn(*case), c_fn(*case)
        if not np.array_equal(a, b):
            raise SystemExit(f"{label}: backends disagree")
        t_py, t_c = bench(py_fn, case, args.repeat), bench(c_fn, case, args.repeat)
        print(f"{label:<30} {t_py * 1e3:12.4f} {t_c * 1e3:12.4f} {t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
