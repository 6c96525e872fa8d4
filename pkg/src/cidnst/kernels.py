"""Backend selection for the dynamic-programming kernels.

The compiled extension ``cidnst._kernels`` is used when it was built;
otherwise the numpy fallback is used. Set ``CIDNST_PURE_PYTHON=1`` to force
the fallback.
"""
import os

import numpy as np

from cidnst import _kernels_py

_compiled = None
if os.environ.get("CIDNST_PURE_PYTHON") != "1":
    try:
        from cidnst import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_impl = BACKENDS[BACKEND]


def ctc_forward_backward(logp, labels, blank, backend=None):
    impl = BACKENDS[backend] if backend else _impl
    logp = np.ascontiguousarray(logp, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return impl.ctc_forward_backward(logp, labels, int(blank))


def levenshtein_align(ref, hyp, backend=None):
    impl = BACKENDS[backend] if backend else _impl
    ref = np.ascontiguousarray(ref, dtype=np.int64)
    hyp = np.ascontiguousarray(hyp, dtype=np.int64)
    return impl.levenshtein_align(ref, hyp)
