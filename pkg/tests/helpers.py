"""Shared fixture builders for the test suite."""

import numpy as np

from lowrank.rng import RngState, gaussian_matrix
from lowrank.sparse import SparseMatrix


def haar_basis(rng, m, r):
    Q, R = np.linalg.qr(gaussian_matrix(rng, m, r))
    return Q * np.sign(np.diag(R))


def spectrum_dense(m, n, values, seed):
    """Dense m x n matrix with prescribed singular values."""
    rng = RngState(seed)
    r = len(values)
    U = haar_basis(rng, m, r)
    V = haar_basis(rng, n, r)
    return (U * np.asarray(values, dtype=float)) @ V.T


def dense_as_sparse(X):
    """Store every entry of X in CSR form (fully dense pattern)."""
    m, n = X.shape
    i, j = np.divmod(np.arange(m * n), n)
    return SparseMatrix.from_coo(m, n, i, j, X.ravel())


def random_sparse(rng, m, n, nnz):
    flat = rng.choice_without_replacement(m * n, nnz)
    i, j = np.divmod(flat, n)
    return SparseMatrix.from_coo(m, n, i, j, rng.normal_pairs(nnz))
