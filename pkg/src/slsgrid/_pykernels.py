"""Pure numpy versions of the sparse block kernels (see ``_ckernels.pyx``)."""

import numpy as np


def _row_ids(indptr):
    return np.repeat(np.arange(indptr.size - 1), np.diff(indptr))


def block_fir(indptr, indices, values, history):
    """out[r] = sum_k sum_{e in row r} values[k, e] * history[k, indices[e]]."""
    prod = np.einsum("ke,ke->e", values, history[:, indices])
    return np.bincount(_row_ids(indptr), weights=prod, minlength=indptr.size - 1)


def block_rowdot(indptr, indices, values, vec):
    """out[k, r] = sum_{e in row r} values[k, e] * vec[indices[e]]."""
    nrows = indptr.size - 1
    out = np.zeros((values.shape[0], nrows))
    lengths = np.diff(indptr)
    nonempty = lengths > 0
    if values.shape[1]:
        prod = values * vec[indices]
        out[:, nonempty] = np.add.reduceat(prod, indptr[:-1][nonempty], axis=1)
    return out


def block_rowaxpy(indptr, indices, values, coeff, vec):
    """values[k, e] += coeff[k, r] * vec[indices[e]] for e in row r, in place."""
    values += coeff[:, _row_ids(indptr)] * vec[indices]
