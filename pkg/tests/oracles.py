"""Independent reference implementations used only by the test suite.

These deliberately share no code with the package internals: dense
Gauss-Legendre tensor quadrature for small MVN rectangles, and an mpmath
single-integral form of the bivariate CDF.
"""

import numpy as np


def dense_rectangle(lower, upper, corr, nodes=96, clip=8.5):
    """Tensor-product Gauss-Legendre integral of the MVN density over a box.

    Infinite bounds are clipped at +/-clip standard deviations (mass beyond
    is < 1e-17).  Chunked over the first axis to keep memory flat.
    """
    lower = np.where(np.isneginf(lower), -clip, np.asarray(lower, dtype=float))
    upper = np.where(np.isposinf(upper), clip, np.asarray(upper, dtype=float))
    corr = np.asarray(corr, dtype=float)
    dim = len(lower)
    x, w = np.polynomial.legendre.leggauss(nodes)
    axes = [0.5 * (hi - lo) * x + 0.5 * (hi + lo) for lo, hi in zip(lower, upper)]
    wts = [0.5 * (hi - lo) * w for lo, hi in zip(lower, upper)]
    prec = np.linalg.inv(corr)
    _, logdet = np.linalg.slogdet(corr)
    const = -0.5 * logdet - 0.5 * dim * np.log(2.0 * np.pi)
    if dim == 1:
        quad = prec[0, 0] * axes[0] ** 2
        return float(np.exp(-0.5 * quad + const) @ wts[0])
    grids = np.meshgrid(*axes[1:], indexing="ij")
    rest = np.stack([g.ravel() for g in grids], axis=-1)
    w_rest = np.ones(rest.shape[0])
    for wg in np.meshgrid(*wts[1:], indexing="ij"):
        w_rest = w_rest * wg.ravel()
    total = 0.0
    for x0, w0 in zip(axes[0], wts[0]):
        pts = np.concatenate([np.full((rest.shape[0], 1), x0), rest], axis=1)
        quad = np.einsum("ij,jk,ik->i", pts, prec, pts)
        total += w0 * float(np.exp(-0.5 * quad + const) @ w_rest)
    return total


def mp_bvn_cdf(x, y, rho, dps=30):
    """P(Z1 <= x, Z2 <= y) via mpmath quadrature of the conditional form.

    Breakpoints straddle the conditional CDF's transition so tanh-sinh
    quadrature cannot step over it when |rho| is close to one.
    """
    import mpmath as mpm

    with mpm.workdps(dps):
        r = mpm.mpf(rho)
        s = mpm.sqrt(1 - r * r)
        f = lambda t: mpm.npdf(t) * mpm.ncdf((mpm.mpf(y) - r * t) / s)
        pts = [-mpm.inf]
        if r != 0:
            tstar = mpm.mpf(y) / r
            for m in (-30, -5, 0, 5, 30):
                pt = tstar + m * s / abs(r)
                if -30 < pt < x:
                    pts.append(pt)
        pts.append(mpm.mpf(x))
        return float(mpm.quad(f, sorted(set(pts), key=mpm.mpf)))


def random_correlation(dim, rng):
    """A random strictly-PD correlation matrix (normalized Wishart-ish)."""
    a = rng.normal(size=(dim, dim + 3))
    s = a @ a.T + 0.05 * np.eye(dim)
    d = np.sqrt(np.diag(s))
    return s / np.outer(d, d)
