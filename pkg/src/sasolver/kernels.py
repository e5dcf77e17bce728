"""Backend selection for the coefficient kernel.

The compiled extension is used when it imports; otherwise, or when
``SASOLVER_PURE_PYTHON=1`` is set, the numpy implementation is used.  The two agree
to round-off (about 1e-14 relative) but not bit for bit, so the active backend
is recorded in every run manifest.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py.weights_table

if os.environ.get("SASOLVER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        _impl = _compiled.weights_table


def weights_table(lam_start, lam_end, alpha_end, nodes, counts, seg_ptr,
                  seg_lo, seg_hi, seg_tau2, gl_x, gl_w, backend=None):
    """Dispatch to the active (or the named) backend after normalizing dtypes."""
    f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)
    args = (f64(lam_start), f64(lam_end), f64(alpha_end), f64(np.atleast_2d(nodes)),
            i64(counts), i64(seg_ptr), f64(seg_lo), f64(seg_hi), f64(seg_tau2),
            f64(gl_x), f64(gl_w))
    if backend is None:
        return _impl(*args)
    if backend == "python":
        return _kernels_py.weights_table(*args)
    if backend == "cython":
        from . import _kernels
        return _kernels.weights_table(*args)
    raise ValueError(f"unknown backend {backend!r}")
