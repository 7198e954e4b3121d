"""NumPy implementations of the numerical hot-path kernels.

Two kernels live here (and, mirrored operation-for-operation, in the Cython
extension ``_kernels``):

* ``sov_accumulate`` — the separation-of-variables integrand of Genz for a
  multivariate normal rectangle, evaluated over a block of randomized
  lattice points, accumulated per QMC shift.
* ``bvn_cdf`` — bivariate standard normal CDF (Genz's hybrid of Drezner &
  Wesolowsky's Gauss–Legendre form and an asymptotic expansion for |r|
  close to one), vectorized over the two abscissae with scalar correlation.

Both backends must agree to ~1e-13; ``tests/test_backends.py`` enforces it.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

BACKEND = "pure"

_UNIT_EPS = 1e-15  # clamp for quantile arguments inside the SOV recursion

# Gauss-Legendre half-rules used by the bivariate CDF (positive nodes only;
# the code mirrors each node about the interval midpoint).
_GL_W = {
    6: np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    12: np.array(
        [
            0.04717533638651177,
            0.1069393259953183,
            0.1600783285433464,
            0.2031674267230659,
            0.2334925365383547,
            0.2491470458134029,
        ]
    ),
    20: np.array(
        [
            0.01761400713915212,
            0.04060142980038694,
            0.06267204833410906,
            0.08327674157670475,
            0.1019301198172404,
            0.1181945319615184,
            0.1316886384491766,
            0.1420961093183821,
            0.1491729864726037,
            0.1527533871307259,
        ]
    ),
}
_GL_X = {
    6: np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    12: np.array(
        [
            0.9815606342467191,
            0.9041172563704750,
            0.7699026741943050,
            0.5873179542866171,
            0.3678314989981802,
            0.1252334085114692,
        ]
    ),
    20: np.array(
        [
            0.9931285991850949,
            0.9639719272779138,
            0.9122344282513259,
            0.8391169718222188,
            0.7463319064601508,
            0.6360536807265150,
            0.5108670019508271,
            0.3737060887154196,
            0.2277858511416451,
            0.07652652113349733,
        ]
    ),
}


def _gl_rule(r):
    if abs(r) < 0.3:
        n = 6
    elif abs(r) < 0.75:
        n = 12
    else:
        n = 20
    x = _GL_X[n]
    w = _GL_W[n]
    # full rule on (0, 2): nodes 1 -+ x with repeated weights
    return np.concatenate([1.0 - x, 1.0 + x]), np.concatenate([w, w])


def sov_accumulate(chol, lower, upper, inf_lower, inf_upper, q, shifts, start, count, sums):
    """Accumulate the SOV integrand over lattice indices start..start+count-1.

    Parameters mirror the compiled kernel exactly: ``chol`` is the (reordered)
    lower-triangular Cholesky factor (K x K, K >= 2), ``lower``/``upper`` the
    rectangle bounds with ``inf_lower``/``inf_upper`` uint8 flags marking
    infinite entries, ``q`` the K-1 lattice generators, ``shifts`` the
    (S, K-1) QMC shifts.  Each shift's partial sum is added into ``sums``
    (length S) in place.
    """
    dim = chol.shape[0]
    diag = np.diagonal(chol)
    d0 = 0.0 if inf_lower[0] else float(ndtr(lower[0] / diag[0]))
    e0 = 1.0 if inf_upper[0] else float(ndtr(upper[0] / diag[0]))
    idx = np.arange(start, start + count, dtype=np.float64)
    lattice = idx[:, None] * q[None, :]
    y = np.empty((count, dim - 1))
    for s in range(shifts.shape[0]):
        u = lattice + shifts[s]
        u -= np.floor(u)
        w = np.abs(2.0 * u - 1.0)
        f = np.full(count, e0 - d0)
        d, e = d0, e0
        for k in range(1, dim):
            z = d + w[:, k - 1] * (e - d)
            z = np.clip(z, _UNIT_EPS, 1.0 - _UNIT_EPS)
            y[:, k - 1] = ndtri(z)
            t = y[:, :k] @ chol[k, :k]
            d = 0.0 if inf_lower[k] else ndtr((lower[k] - t) / diag[k])
            e = 1.0 if inf_upper[k] else ndtr((upper[k] - t) / diag[k])
            f *= np.maximum(e - d, 0.0)
        sums[s] += f.sum()


def bvn_cdf(x, y, r):
    """P(Z1 <= x_i, Z2 <= y_i) for standard bivariate normals with correlation r.

    ``x`` and ``y`` broadcast against each other and may contain +/-inf;
    ``r`` is a scalar in [-1, 1].  Returns a float64 array of the
    broadcast shape.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    return _bvnu(-x.ravel(), -y.ravel(), float(r)).reshape(x.shape)


def _bvnu(dh, dk, r):
    """P(X > dh_i, Y > dk_i) with correlation r; the Genz 'bvnu' routine."""
    out = np.empty(dh.shape, dtype=np.float64)
    m_zero = (dh == np.inf) | (dk == np.inf)
    m_h = (dk == -np.inf) & ~m_zero
    m_k = (dh == -np.inf) & ~m_zero
    m_one = m_h & m_k
    out[m_zero] = 0.0
    out[m_h] = ndtr(-dh[m_h])
    out[m_k] = ndtr(-dk[m_k])
    out[m_one] = 1.0
    core = ~(m_zero | m_h | m_k)
    if core.any():
        out[core] = _bvnu_finite(dh[core], dk[core], r)
    return out


def _bvnu_finite(h, k, r):
    if r == 0.0:
        return ndtr(-h) * ndtr(-k)
    if r == 1.0:
        return ndtr(-np.maximum(h, k))
    if r == -1.0:
        return np.maximum(0.0, ndtr(-h) - ndtr(k))
    xg, wg = _gl_rule(r)
    if abs(r) < 0.925:
        hk = h * k
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * np.arcsin(r)
        sn = np.sin(asr * xg)
        dens = np.exp((np.outer(hk, sn) - hs[:, None]) / (1.0 - sn * sn))
        return dens @ wg * (asr / (2.0 * np.pi)) + ndtr(-h) * ndtr(-k)

    # |r| close to one: asymptotic expansion about r = +/-1 plus a
    # Gauss-Legendre correction over the remaining correlation path.
    twopi = 2.0 * np.pi
    if r < 0.0:
        k = -k
    hk = h * k
    bvn = np.zeros(h.shape)
    a2 = (1.0 - r) * (1.0 + r)
    a = np.sqrt(a2)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr = -0.5 * (bs / a2 + hk)
    m = asr > -100.0
    bvn[m] = (
        a
        * np.exp(asr[m])
        * (1.0 - c[m] * (bs[m] - a2) * (1.0 - d[m] * bs[m] / 5.0) / 3.0 + c[m] * d[m] * a2 * a2 / 5.0)
    )
    m = hk > -100.0
    b = np.sqrt(bs)
    sp = np.sqrt(twopi) * ndtr(-b / a)
    bvn[m] -= np.exp(-0.5 * hk[m]) * sp[m] * b[m] * (1.0 - c[m] * bs[m] * (1.0 - d[m] * bs[m] / 5.0) / 3.0)
    ah = 0.5 * a
    xs = (ah * xg) ** 2
    rs = np.sqrt(1.0 - xs)
    asr = -0.5 * (bs[:, None] / xs[None, :] + hk[:, None])
    m = asr > -100.0
    sp = 1.0 + c[:, None] * xs[None, :] * (1.0 + d[:, None] * xs[None, :])
    ep = np.exp(-0.5 * hk[:, None] * xs[None, :] / (1.0 + rs[None, :]) ** 2) / rs[None, :]
    bvn += ah * (np.where(m, np.exp(asr) * (ep - sp), 0.0) @ wg)
    bvn /= -twopi
    if r > 0.0:
        return bvn + ndtr(-np.maximum(h, k))
    return -bvn + np.maximum(0.0, ndtr(-h) - ndtr(-k))
