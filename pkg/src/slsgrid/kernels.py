"""Sparse block kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; setting the environment
variable ``SLSGRID_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

if _ckernels is not None and not os.environ.get("SLSGRID_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"
_impl = BACKENDS[BACKEND]


def backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    return _impl if name is None else BACKENDS[name]


class Pattern:
    """CSR sparsity structure of a boolean ``mask`` shared by a stack of matrices."""

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=bool)
        self.shape = mask.shape
        rows, cols = np.nonzero(mask)
        self.indices = np.ascontiguousarray(cols, dtype=np.intp)
        self.rows = np.ascontiguousarray(rows, dtype=np.intp)
        counts = np.bincount(rows, minlength=mask.shape[0])
        self.indptr = np.zeros(mask.shape[0] + 1, dtype=np.intp)
        np.cumsum(counts, out=self.indptr[1:])

    @property
    def nnz(self):
        return self.indices.size

    def gather(self, dense):
        """Stack of dense matrices ``(K, m, n)`` -> values ``(K, nnz)``."""
        return np.ascontiguousarray(np.asarray(dense)[:, self.rows, self.indices])

    def scatter(self, values):
        out = np.zeros((values.shape[0],) + self.shape)
        out[:, self.rows, self.indices] = values
        return out

    def fir(self, values, history, impl=None):
        return (impl or _impl).block_fir(self.indptr, self.indices, values,
                                         np.ascontiguousarray(history))

    def rowdot(self, values, vec, impl=None):
        return (impl or _impl).block_rowdot(self.indptr, self.indices, values,
                                            np.ascontiguousarray(vec, dtype=float))

    def rowaxpy(self, values, coeff, vec, impl=None):
        (impl or _impl).block_rowaxpy(self.indptr, self.indices, values,
                                      np.ascontiguousarray(coeff),
                                      np.ascontiguousarray(vec, dtype=float))
