"""Benchmark the compiled integration kernels against the NumPy fallback.

The two implementations trade places depending on batch size: the compiled
scalar loops have near-zero fixed overhead and win the small batches that
dominate sample-size searches, while the vectorized fallback amortizes its
per-call overhead and wins bulk batches.  The default (``auto``) backend
therefore routes each call by size.  This script measures both kernels in
both regimes, plus end-to-end rectangle probabilities under each routing
policy.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from mixedpower import _backend, _kernels_py
from mixedpower.mvn import CorrelationMatrix, mvn_rectangle

try:
    from mixedpower import _kernels as _compiled
except ImportError:
    _compiled = None


def _time_call(fn, min_seconds=0.3, min_calls=5):
    """Repeat fn until min_seconds elapsed; return seconds per call."""
    fn()  # warm up
    calls = 0
    start = time.perf_counter()
    while True:
        fn()
        calls += 1
        elapsed = time.perf_counter() - start
        if elapsed >= min_seconds and calls >= min_calls:
            return elapsed / calls


def _sov_problem(dim, n_shifts, count):
    rng = np.random.default_rng(3)
    a = rng.normal(size=(dim, dim))
    cov = a @ a.T
    d = np.sqrt(np.diag(cov))
    corr = cov / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    chol = np.linalg.cholesky(corr)
    lower = rng.uniform(-2.0, -0.2, size=dim)
    upper = rng.uniform(0.2, 2.5, size=dim)
    inf_lower = np.zeros(dim, dtype=np.uint8)
    inf_upper = np.zeros(dim, dtype=np.uint8)
    primes = np.array([2.0, 3.0, 5.0, 7.0, 11.0, 13.0])[:dim]
    q = np.sqrt(primes) % 1.0
    shifts = rng.random(size=(n_shifts, dim))
    sums = np.zeros(n_shifts)
    return (chol, lower, upper, inf_lower, inf_upper, q, shifts), count, sums


def bench_bvn(kernels, n):
    rng = np.random.default_rng(42)
    x = rng.uniform(-3.0, 3.0, size=n)
    y = rng.uniform(-3.0, 3.0, size=n)
    return _time_call(lambda: kernels.bvn_cdf(x, y, 0.6))


def bench_sov(kernels, count):
    args, count, sums = _sov_problem(dim=3, n_shifts=12, count=count)

    def run():
        sums[:] = 0.0
        kernels.sov_accumulate(*args, 0, count, sums)

    return _time_call(run)


class _Hybrid:
    """The auto routing policy, reproduced locally for measurement."""

    BACKEND = "auto"

    @staticmethod
    def sov_accumulate(chol, lower, upper, il, iu, q, shifts, start, count, sums):
        impl = _compiled if count <= 256 else _kernels_py
        return impl.sov_accumulate(chol, lower, upper, il, iu, q, shifts,
                                   start, count, sums)

    @staticmethod
    def bvn_cdf(x, y, r):
        small = max(np.size(x), np.size(y)) <= 192
        return (_compiled if small else _kernels_py).bvn_cdf(x, y, r)


def _swap(kernels):
    saved = (_backend.kernels, _backend.sov_accumulate, _backend.bvn_cdf)
    _backend.kernels = kernels
    _backend.sov_accumulate = kernels.sov_accumulate
    _backend.bvn_cdf = kernels.bvn_cdf
    return saved


def bench_rectangle(kernels, dim, accuracy):
    saved = _swap(kernels)
    try:
        rng = np.random.default_rng(11)
        a = rng.normal(size=(dim, dim))
        cov = a @ a.T
        d = np.sqrt(np.diag(cov))
        corr = CorrelationMatrix(cov / np.outer(d, d))
        lower = np.full(dim, -1.2)
        upper = np.full(dim, 0.9)
        lower[0] = -np.inf
        upper[-1] = np.inf

        def run():
            mvn_rectangle(lower, upper, corr, accuracy=accuracy, seed=7)

        return _time_call(run, min_seconds=0.5, min_calls=2)
    finally:
        _backend.kernels, _backend.sov_accumulate, _backend.bvn_cdf = saved


def bench_joint_power(kernels):
    """The library's own planning workload: joint power on four outcomes."""
    from mixedpower import reference
    from mixedpower.power import PowerQuery, power_coprimary

    saved = _swap(kernels)
    try:
        design = reference.case_study_design(18.0, 0.35)

        def run():
            power_coprimary(PowerQuery(design, 403, alpha=0.025, accuracy=1e-6))

        return _time_call(run, min_seconds=0.5, min_calls=3)
    finally:
        _backend.kernels, _backend.sov_accumulate, _backend.bvn_cdf = saved


def main():
    if _compiled is None:
        print("compiled extension not importable; benchmarking the fallback only\n")

    kernel_rows = [
        ("bvn_cdf, 4 points (bivariate rectangle)", lambda k: bench_bvn(k, 4), 1e6, "us/call"),
        ("bvn_cdf, 200k points (bulk)", lambda k: bench_bvn(k, 200_000), 1e3, "ms/call"),
        ("sov dim=3, 128-point chunk (search)", lambda k: bench_sov(k, 128), 1e6, "us/call"),
        ("sov dim=3, 8192-point chunk (bulk)", lambda k: bench_sov(k, 8192), 1e3, "ms/call"),
    ]
    end_to_end = [
        ("joint power, 4 outcomes at 1e-6", lambda k: bench_joint_power(k)),
        ("rectangle dim=5 at 1e-8 (tight)", lambda k: bench_rectangle(k, 5, 1e-8)),
    ]

    backends = [("pure", _kernels_py)]
    if _compiled is not None:
        backends += [("compiled", _compiled), ("auto", _Hybrid)]

    width = 44
    header = f"{'workload':<{width}}" + "".join(f"{name:>14}" for name, _ in backends)
    print(header)
    print("-" * len(header))
    for label, fn, scale, unit in kernel_rows:
        cells = []
        for name, kernels in backends:
            if name == "auto":
                cells.append(f"{'':>14}")
                continue
            cells.append(f"{fn(kernels) * scale:>11,.2f} {unit.split('/')[0]}")
        print(f"{label:<{width}}" + "".join(cells))
    for label, fn in end_to_end:
        cells = []
        for name, kernels in backends:
            cells.append(f"{fn(kernels) * 1e3:>11,.2f} ms")
        print(f"{label:<{width}}" + "".join(cells))
    print("-" * len(header))
    print("lower is better; auto routes each call by batch size")


if __name__ == "__main__":
    main()
