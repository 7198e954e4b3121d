"""Compiled and pure kernels must agree operation-for-operation."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import ndtr

from mixedpower import _kernels_py

try:
    from mixedpower import _kernels as _kernels_c
except ImportError:  # pragma: no cover - environment without the extension
    _kernels_c = None

needs_compiled = pytest.mark.skipif(
    _kernels_c is None, reason="compiled kernel extension not built"
)


def sov_problem(dim=4, seed=3, n_shifts=8, count=512):
    """A reproducible SOV workload with finite and infinite bounds."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    cov = a @ a.T + dim * np.eye(dim)
    scale = np.sqrt(np.diagonal(cov))
    corr = cov / np.outer(scale, scale)
    chol = np.linalg.cholesky(corr)
    lower = rng.uniform(-2.0, -0.2, dim)
    upper = rng.uniform(0.2, 2.5, dim)
    inf_lower = np.zeros(dim, dtype=np.uint8)
    inf_upper = np.zeros(dim, dtype=np.uint8)
    inf_lower[1 % dim] = 1  # exercise the infinite-bound branches
    inf_upper[(dim - 1) % dim] = 1
    lower[inf_lower == 1] = -np.inf
    upper[inf_upper == 1] = np.inf
    primes = np.array([2, 3, 5, 7, 11, 13], dtype=np.float64)
    q = np.sqrt(primes[: dim - 1]) % 1.0
    shifts = rng.random((n_shifts, dim - 1))
    return chol, lower, upper, inf_lower, inf_upper, q, shifts, count


class TestPureKernels:
    def test_bvn_cdf_zero_correlation_factorizes(self):
        x = np.array([-1.5, -0.3, 0.0, 0.7, 2.1])
        y = np.array([-0.9, 0.2, 0.0, 1.4, -2.0])
        got = _kernels_py.bvn_cdf(x, y, 0.0)
        assert np.allclose(got, ndtr(x) * ndtr(y), atol=1e-15)

    def test_bvn_cdf_perfect_correlation(self):
        x = np.array([-1.0, 0.5, 1.2])
        y = np.array([0.3, 0.1, -0.4])
        assert np.allclose(
            _kernels_py.bvn_cdf(x, y, 1.0), ndtr(np.minimum(x, y)), atol=1e-15
        )
        assert np.allclose(
            _kernels_py.bvn_cdf(x, y, -1.0),
            np.maximum(0.0, ndtr(x) + ndtr(y) - 1.0),
            atol=1e-15,
        )

    def test_bvn_cdf_infinities(self):
        assert _kernels_py.bvn_cdf(np.inf, 0.3, 0.6) == pytest.approx(
            float(ndtr(0.3)), abs=1e-15
        )
        assert _kernels_py.bvn_cdf(-np.inf, 0.3, 0.6) == 0.0
        assert _kernels_py.bvn_cdf(np.inf, np.inf, -0.2) == 1.0

    def test_bvn_cdf_symmetry_and_bounds(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(40)
        y = rng.standard_normal(40)
        for r in (-0.95, -0.6, -0.2, 0.0, 0.35, 0.8, 0.97):
            a = _kernels_py.bvn_cdf(x, y, r)
            b = _kernels_py.bvn_cdf(y, x, r)
            assert np.allclose(a, b, atol=1e-14)  # exchangeable arguments
            assert np.all(a >= -1e-15)
            assert np.all(a <= np.minimum(ndtr(x), ndtr(y)) + 1e-13)

    def test_sov_accumulate_matches_plain_python_recursion(self):
        chol, lower, upper, inf_lower, inf_upper, q, shifts, count = sov_problem(dim=3)
        sums = np.zeros(shifts.shape[0])
        _kernels_py.sov_accumulate(
            chol, lower, upper, inf_lower, inf_upper, q, shifts, 0, count, sums
        )

        # scalar re-implementation, one lattice point at a time
        from scipy.special import ndtri

        def one_point(u):
            w = np.abs(2.0 * ((u) - np.floor(u)) - 1.0)
            d = 0.0 if inf_lower[0] else ndtr(lower[0] / chol[0, 0])
            e = 1.0 if inf_upper[0] else ndtr(upper[0] / chol[0, 0])
            f = e - d
            ys = []
            for k in range(1, chol.shape[0]):
                z = min(max(d + w[k - 1] * (e - d), 1e-15), 1 - 1e-15)
                ys.append(ndtri(z))
                t = float(np.dot(chol[k, :k], ys))
                d = 0.0 if inf_lower[k] else ndtr((lower[k] - t) / chol[k, k])
                e = 1.0 if inf_upper[k] else ndtr((upper[k] - t) / chol[k, k])
                f *= max(e - d, 0.0)
            return f

        for s in range(shifts.shape[0]):
            want = sum(one_point(i * q + shifts[s]) for i in range(count))
            assert sums[s] == pytest.approx(want, rel=1e-12)


@needs_compiled
class TestBackendParity:
    def test_backends_report_their_kind(self):
        assert _kernels_py.BACKEND == "pure"
        assert _kernels_c.BACKEND == "compiled"

    def test_bvn_cdf_agrees(self):
        rng = np.random.default_rng(7)
        x = np.concatenate([rng.standard_normal(200) * 1.5, [np.inf, -np.inf, 0.0]])
        y = np.concatenate([rng.standard_normal(200) * 1.5, [0.4, 0.4, -np.inf]])
        for r in (-0.999, -0.95, -0.5, -0.1, 0.0, 0.3, 0.74, 0.9, 0.999, 1.0, -1.0):
            a = _kernels_py.bvn_cdf(x, y, r)
            b = _kernels_c.bvn_cdf(x, y, r)
            assert np.allclose(a, b, atol=5e-14), f"r={r}"

    def test_sov_accumulate_agrees(self):
        for dim in (2, 3, 4, 6):
            chol, lower, upper, inf_lower, inf_upper, q, shifts, count = sov_problem(
                dim=dim, seed=dim
            )
            sums_py = np.zeros(shifts.shape[0])
            sums_c = np.zeros(shifts.shape[0])
            _kernels_py.sov_accumulate(
                chol, lower, upper, inf_lower, inf_upper, q, shifts, 0, count, sums_py
            )
            _kernels_c.sov_accumulate(
                chol, lower, upper, inf_lower, inf_upper, q, shifts, 0, count, sums_c
            )
            assert sums_c == pytest.approx(sums_py, rel=1e-12, abs=1e-12), f"dim={dim}"

    def test_sov_accumulate_chunking_invariance(self):
        # accumulating 0..511 in one call equals two calls over halves
        chol, lower, upper, inf_lower, inf_upper, q, shifts, count = sov_problem(dim=4)
        whole = np.zeros(shifts.shape[0])
        split = np.zeros(shifts.shape[0])
        _kernels_c.sov_accumulate(
            chol, lower, upper, inf_lower, inf_upper, q, shifts, 0, count, whole
        )
        half = count // 2
        _kernels_c.sov_accumulate(
            chol, lower, upper, inf_lower, inf_upper, q, shifts, 0, half, split
        )
        _kernels_c.sov_accumulate(
            chol, lower, upper, inf_lower, inf_upper, q, shifts, half, count - half, split
        )
        assert split == pytest.approx(whole, rel=1e-13)


class TestSelection:
    def test_active_backend_is_exported(self):
        import mixedpower
        from mixedpower import _backend

        assert mixedpower.BACKEND == _backend.BACKEND
        expected = "compiled" if _kernels_c is not None else "pure"
        assert _backend.BACKEND == expected  # auto prefers the extension

    def test_env_override_and_cross_backend_value(self):
        """A forced-pure subprocess reproduces this process's rectangle value."""
        code = (
            "import json, numpy as np\n"
            "from mixedpower import BACKEND\n"
            "from mixedpower.mvn import CorrelationMatrix, mvn_rectangle\n"
            "corr = CorrelationMatrix(np.array("
            "[[1.0, 0.45, 0.2], [0.45, 1.0, -0.3], [0.2, -0.3, 1.0]]))\n"
            "r = mvn_rectangle([-1.0, -np.inf, -0.4], [1.2, 0.8, np.inf], corr,"
            " accuracy=1e-8, seed=5)\n"
            "print(json.dumps({'backend': BACKEND, 'value': r.value}))\n"
        )
        env = dict(os.environ, MIXEDPOWER_BACKEND="pure")
        proc = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, env=env
        )
        assert proc.returncode == 0, proc.stderr
        payload = json.loads(proc.stdout)
        assert payload["backend"] == "pure"

        import numpy as _np

        from mixedpower.mvn import CorrelationMatrix, mvn_rectangle

        corr = CorrelationMatrix(
            np.array([[1.0, 0.45, 0.2], [0.45, 1.0, -0.3], [0.2, -0.3, 1.0]])
        )
        here = mvn_rectangle(
            [-1.0, -_np.inf, -0.4], [1.2, 0.8, _np.inf], corr, accuracy=1e-8, seed=5
        )
        assert payload["value"] == pytest.approx(here.value, abs=5e-8)

    def test_unknown_backend_value_fails_import(self):
        env = dict(os.environ, MIXEDPOWER_BACKEND="quantum")
        proc = subprocess.run(
            [sys.executable, "-c", "import mixedpower"],
            capture_output=True,
            text=True,
            env=env,
        )
        assert proc.returncode != 0
        assert "MIXEDPOWER_BACKEND" in proc.stderr

    @needs_compiled
    def test_auto_dispatch_consistent_across_size_thresholds(self):
        """The size-routed dispatchers match the raw kernels on both sides
        of their crossover thresholds."""
        from mixedpower import _backend

        rng = np.random.default_rng(23)
        for n in (4, 191, 192, 193, 400):
            x = rng.uniform(-2.5, 2.5, n)
            y = rng.uniform(-2.5, 2.5, n)
            via_backend = _backend.bvn_cdf(x, y, 0.37)
            direct = _kernels_py.bvn_cdf(x, y, 0.37)
            assert np.allclose(via_backend, direct, atol=5e-14), n

        chol, lower, upper, inf_lower, inf_upper, q, shifts, _ = sov_problem(dim=3)
        for count in (128, 256, 257, 1024):
            routed = np.zeros(shifts.shape[0])
            raw = np.zeros(shifts.shape[0])
            _backend.sov_accumulate(
                chol, lower, upper, inf_lower, inf_upper, q, shifts, 0, count, routed
            )
            _kernels_py.sov_accumulate(
                chol, lower, upper, inf_lower, inf_upper, q, shifts, 0, count, raw
            )
            assert routed == pytest.approx(raw, rel=1e-12, abs=1e-12), count
