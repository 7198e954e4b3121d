# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled numerical hot-path kernels.

Mirrors ``_kernels_py`` operation-for-operation: the Genz
separation-of-variables MVN integrand and the bivariate normal CDF.
"""

import numpy as np

from libc.math cimport (asin, erfc, exp, fabs, floor, isinf, log, sin, sqrt,
                        INFINITY, M_PI, M_SQRT1_2)

BACKEND = "compiled"

cdef double UNIT_EPS = 1e-15


cdef inline double ndtr(double x) noexcept nogil:
    return 0.5 * erfc(-x * M_SQRT1_2)


cdef double ndtri(double p) noexcept nogil:
    # Wichura-style rational approximation for the standard normal quantile;
    # the outer branches get one Newton step in the complementary-tail form,
    # which keeps full relative precision however small min(p, 1-p) gets.
    # Callers clip p away from {0, 1}.
    cdef double q = p - 0.5
    cdef double r, num, den, val, tail, pdf, t
    cdef int it
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r
                    + 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r
                  + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r
                + 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0)
        den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r
                    + 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r
                  + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r
                + 4.2313330701600911252e+1) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    tail = r
    r = sqrt(-log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r
                  + 3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r
                + 4.63033784615654529590e+0) * r + 1.42343711074968357734e+0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r
                + 2.05319162663775882187e+0) * r + 1.0)
        val = num / den
        pdf = exp(-0.5 * val * val) * 0.3989422804014326779399461
        val += (0.5 * erfc(val * M_SQRT1_2) - tail) / pdf
    else:
        # extreme tail (min(p, 1-p) below ~1.4e-11, rare): asymptotic start,
        # then Newton on the complementary tail probability, which keeps full
        # relative precision at any representable tail mass
        t = r * 1.4142135623730950488
        val = t - (1.8378770664093454836 + 2.0 * log(t)) / (2.0 * t)
        for it in range(5):
            pdf = exp(-0.5 * val * val) * 0.3989422804014326779399461
            val += (0.5 * erfc(val * M_SQRT1_2) - tail) / pdf
    return -val if q < 0.0 else val

# Gauss-Legendre half-rules (positive nodes; mirrored about the midpoint).
cdef double _GLX[3][10]
cdef double _GLW[3][10]
cdef int _GLN[3]

_GLN[0] = 3
_GLN[1] = 6
_GLN[2] = 10

_tables = {
    0: (
        [0.9324695142031522, 0.6612093864662647, 0.2386191860831970],
        [0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
    ),
    1: (
        [0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
         0.5873179542866171, 0.3678314989981802, 0.1252334085114692],
        [0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
         0.2031674267230659, 0.2334925365383547, 0.2491470458134029],
    ),
    2: (
        [0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
         0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
         0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
         0.07652652113349733],
        [0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
         0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
         0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
         0.1527533871307259],
    ),
}
for _set, (_xs, _ws) in _tables.items():
    for _j in range(len(_xs)):
        _GLX[_set][_j] = _xs[_j]
        _GLW[_set][_j] = _ws[_j]
del _tables, _set, _xs, _ws, _j


def sov_accumulate(double[:, ::1] chol, double[::1] lower, double[::1] upper,
                   unsigned char[::1] inf_lower, unsigned char[::1] inf_upper,
                   double[::1] q, double[:, ::1] shifts,
                   long long start, long long count, double[::1] sums):
    """Accumulate the SOV integrand per QMC shift; see the pure twin."""
    cdef Py_ssize_t dim = chol.shape[0]
    cdef Py_ssize_t nshift = shifts.shape[0]
    cdef Py_ssize_t s, k, j
    cdef long long i
    cdef double d0, e0, d, e, f, z, t, u, acc
    cdef double y[32]
    if dim > 32:
        raise ValueError(f"dimension {dim} exceeds the kernel limit 32")
    d0 = 0.0 if inf_lower[0] else ndtr(lower[0] / chol[0, 0])
    e0 = 1.0 if inf_upper[0] else ndtr(upper[0] / chol[0, 0])
    with nogil:
        for s in range(nshift):
            acc = 0.0
            for i in range(start, start + count):
                f = e0 - d0
                d = d0
                e = e0
                for k in range(1, dim):
                    u = i * q[k - 1] + shifts[s, k - 1]
                    u -= floor(u)
                    z = d + fabs(2.0 * u - 1.0) * (e - d)
                    if z < UNIT_EPS:
                        z = UNIT_EPS
                    elif z > 1.0 - UNIT_EPS:
                        z = 1.0 - UNIT_EPS
                    y[k - 1] = ndtri(z)
                    t = 0.0
                    for j in range(k):
                        t += chol[k, j] * y[j]
                    d = 0.0 if inf_lower[k] else ndtr((lower[k] - t) / chol[k, k])
                    e = 1.0 if inf_upper[k] else ndtr((upper[k] - t) / chol[k, k])
                    if e < d:
                        e = d
                    f *= e - d
                acc += f
            sums[s] += acc


cdef double _bvnu_finite(double h, double k, double r) noexcept nogil:
    cdef double twopi = 2.0 * M_PI
    cdef double hk, hs, asr, sn, acc, a2, a, bs, c, d, b, sp, ah, xv, xs, rs, ep
    cdef Py_ssize_t rule, n, i, j
    if r == 0.0:
        return ndtr(-h) * ndtr(-k)
    if r == 1.0:
        return ndtr(-(h if h > k else k))
    if r == -1.0:
        acc = ndtr(-h) - ndtr(k)
        return acc if acc > 0.0 else 0.0
    if fabs(r) < 0.3:
        rule = 0
    elif fabs(r) < 0.75:
        rule = 1
    else:
        rule = 2
    n = _GLN[rule]
    if fabs(r) < 0.925:
        hk = h * k
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * asin(r)
        acc = 0.0
        for i in range(n):
            for j in range(2):
                xv = 1.0 - _GLX[rule][i] if j == 0 else 1.0 + _GLX[rule][i]
                sn = sin(asr * xv)
                acc += _GLW[rule][i] * exp((sn * hk - hs) / (1.0 - sn * sn))
        return acc * asr / twopi + ndtr(-h) * ndtr(-k)

    if r < 0.0:
        k = -k
    hk = h * k
    acc = 0.0
    a2 = (1.0 - r) * (1.0 + r)
    a = sqrt(a2)
    bs = (h - k) * (h - k)
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr = -0.5 * (bs / a2 + hk)
    if asr > -100.0:
        acc = a * exp(asr) * (1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0
                              + c * d * a2 * a2 / 5.0)
    if hk > -100.0:
        b = sqrt(bs)
        sp = sqrt(twopi) * ndtr(-b / a)
        acc -= exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
    ah = 0.5 * a
    for i in range(n):
        for j in range(2):
            xv = 1.0 - _GLX[rule][i] if j == 0 else 1.0 + _GLX[rule][i]
            xs = (ah * xv) * (ah * xv)
            rs = sqrt(1.0 - xs)
            asr = -0.5 * (bs / xs + hk)
            if asr > -100.0:
                sp = 1.0 + c * xs * (1.0 + d * xs)
                ep = exp(-0.5 * hk * xs / ((1.0 + rs) * (1.0 + rs))) / rs
                acc += ah * _GLW[rule][i] * exp(asr) * (ep - sp)
    acc /= -twopi
    if r > 0.0:
        return acc + ndtr(-(h if h > k else k))
    acc = -acc
    sp = ndtr(-h) - ndtr(-k)
    return acc + (sp if sp > 0.0 else 0.0)


cdef double _bvnu(double dh, double dk, double r) noexcept nogil:
    if isinf(dh) or isinf(dk):
        if dh == INFINITY or dk == INFINITY:
            return 0.0
        if dh == -INFINITY and dk == -INFINITY:
            return 1.0
        if dh == -INFINITY:
            return ndtr(-dk)
        return ndtr(-dh)
    return _bvnu_finite(dh, dk, r)


def bvn_cdf(x, y, r):
    """P(Z1 <= x_i, Z2 <= y_i); vectorized twin of the pure implementation."""
    xa, ya = np.broadcast_arrays(np.asarray(x, dtype=np.float64),
                                 np.asarray(y, dtype=np.float64))
    shape = xa.shape
    xf = np.ascontiguousarray(xa).ravel()
    yf = np.ascontiguousarray(ya).ravel()
    out = np.empty(xf.shape[0], dtype=np.float64)
    cdef double[::1] xv = xf
    cdef double[::1] yv = yf
    cdef double[::1] ov = out
    cdef double rr = float(r)
    cdef Py_ssize_t i, m = xf.shape[0]
    with nogil:
        for i in range(m):
            ov[i] = _bvnu(-xv[i], -yv[i], rr)
    return out.reshape(shape)
