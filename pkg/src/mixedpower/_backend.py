"""Selects the kernel backend at import time.

The compiled Cython extension is preferred when importable; the NumPy
implementation is the fallback.  ``MIXEDPOWER_BACKEND`` overrides the
choice: ``compiled`` (extension only, fail loudly if missing), ``pure``
(fallback only), or ``auto``.

In ``auto`` mode with the extension present, each call is routed by batch
size: the scalar extension loops win on the small batches that dominate
planning searches (low fixed overhead), while the vectorized fallback wins
on bulk batches (amortized array operations).  The two implementations
agree to near machine precision, and the routing depends only on the call
shape, so results stay deterministic for a given installation.
"""

import os

import numpy as np

_choice = os.environ.get("MIXEDPOWER_BACKEND", "auto").strip().lower()
if _choice not in {"auto", "compiled", "pure"}:
    raise ImportError(
        f"MIXEDPOWER_BACKEND={_choice!r} not understood; use 'auto', 'compiled' or 'pure'"
    )

_compiled = None
if _choice in {"auto", "compiled"}:
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _choice == "compiled":
            raise
        _compiled = None
from . import _kernels_py as _pure

# measured crossover points (single core): the extension is faster below
# these batch sizes, the vectorized fallback above them
_SOV_SMALL_COUNT = 256
_BVN_SMALL_SIZE = 192

if _choice == "pure" or _compiled is None:
    kernels = _pure
    BACKEND = _pure.BACKEND
    sov_accumulate = _pure.sov_accumulate
    bvn_cdf = _pure.bvn_cdf
elif _choice == "compiled":
    kernels = _compiled
    BACKEND = _compiled.BACKEND
    sov_accumulate = _compiled.sov_accumulate
    bvn_cdf = _compiled.bvn_cdf
else:
    kernels = _compiled
    BACKEND = _compiled.BACKEND

    def sov_accumulate(chol, lower, upper, inf_lower, inf_upper, q, shifts,
                       start, count, sums):
        impl = _compiled if count <= _SOV_SMALL_COUNT else _pure
        return impl.sov_accumulate(chol, lower, upper, inf_lower, inf_upper,
                                   q, shifts, start, count, sums)

    def bvn_cdf(x, y, r):
        small = max(np.size(x), np.size(y)) <= _BVN_SMALL_SIZE
        return (_compiled if small else _pure).bvn_cdf(x, y, r)
