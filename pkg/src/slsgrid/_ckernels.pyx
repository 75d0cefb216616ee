# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse block kernels.

A pattern is a CSR sparsity structure (``indptr``, ``indices``) shared by a
stack of ``K`` matrices whose nonzeros are stored row-wise in ``values[k, :]``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.intp_t idx_t


def block_fir(const idx_t[::1] indptr, const idx_t[::1] indices,
              const double[:, ::1] values, const double[:, ::1] history):
    cdef Py_ssize_t nrows = indptr.shape[0] - 1
    cdef Py_ssize_t K = values.shape[0]
    cdef Py_ssize_t r, e, k
    cdef idx_t j
    cdef double acc
    out = np.zeros(nrows)
    cdef double[::1] o = out
    for r in range(nrows):
        acc = 0.0
        for e in range(indptr[r], indptr[r + 1]):
            j = indices[e]
            for k in range(K):
                acc += values[k, e] * history[k, j]
        o[r] = acc
    return out


def block_rowdot(const idx_t[::1] indptr, const idx_t[::1] indices,
                 const double[:, ::1] values, const double[::1] vec):
    cdef Py_ssize_t nrows = indptr.shape[0] - 1
    cdef Py_ssize_t K = values.shape[0]
    cdef Py_ssize_t r, e, k
    cdef double acc
    out = np.zeros((K, nrows))
    cdef double[:, ::1] o = out
    for k in range(K):
        for r in range(nrows):
            acc = 0.0
            for e in range(indptr[r], indptr[r + 1]):
                acc += values[k, e] * vec[indices[e]]
            o[k, r] = acc
    return out


def block_rowaxpy(const idx_t[::1] indptr, const idx_t[::1] indices,
                  double[:, ::1] values, const double[:, ::1] coeff,
                  const double[::1] vec):
    cdef Py_ssize_t nrows = indptr.shape[0] - 1
    cdef Py_ssize_t K = values.shape[0]
    cdef Py_ssize_t r, e, k
    cdef double c
    for k in range(K):
        for r in range(nrows):
            c = coeff[k, r]
            if c == 0.0:
                continue
            for e in range(indptr[r], indptr[r + 1]):
                values[k, e] += c * vec[indices[e]]
