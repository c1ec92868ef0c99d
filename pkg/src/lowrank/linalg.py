"""Dense building blocks for the randomized SVD algorithms.

Matrices are plain float64 numpy arrays.  Every operation is a pure
function of its inputs: no global state, fresh outputs, safe to call
concurrently.  Reduced factorizations (QR, LU, symmetric eig, dense SVD)
delegate to LAPACK; the economic SVD via the Gram matrix and all rank /
degeneracy policies are implemented here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, RankDeficiencyError, SizeCapError

# Relative eigenvalue threshold below which the Gram matrix is declared
# rank-deficient.  The source method leaves this open; exposed so callers
# can tighten it.
GRAM_RANK_TOL = 1e-12

# Relative column-norm collapse threshold for QR-based orthonormalization.
ORTH_RANK_TOL = 1e-12

# Relative zero-pivot threshold for the permuted-LU factor.
LU_PIVOT_TOL = 1e-14

# Largest min(m, n) the dense SVD oracle accepts.
ORACLE_SVD_CAP = 2000


@dataclass
class SvdResult:
    """An economic SVD triple with an explicit singular-value order.

    Attributes
    ----------
    U : ndarray (m, r)
    S : ndarray (r,)
        Nonnegative singular values, sorted per `order`.
    V : ndarray (n, r)
    order : str
        "ascending" or "descending".
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    order: str

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def descending(self) -> "SvdResult":
        """The same factorization with singular values descending."""
        if self.order == "descending":
            return self
        return SvdResult(self.U[:, ::-1], self.S[::-1], self.V[:, ::-1], "descending")

    def ascending(self) -> "SvdResult":
        if self.order == "ascending":
            return self
        return SvdResult(self.U[:, ::-1], self.S[::-1], self.V[:, ::-1], "ascending")

    def truncate(self, k: int) -> "SvdResult":
        """Keep the k largest triplets (result is descending)."""
        d = self.descending()
        return SvdResult(d.U[:, :k], d.S[:k], d.V[:, :k], "descending")

    def reconstruct(self) -> np.ndarray:
        """Densify U diag(S) V^T."""
        return (self.U * self.S) @ self.V.T


def _check_matrix(X: np.ndarray, name: str = "matrix") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"{name} must be 2-D with positive dims, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite entries")
    return X


def _fix_signs(U: np.ndarray, V: np.ndarray) -> None:
    """Flip factor pairs so each V column's first nonzero entry is >= 0.

    In-place; keeps U diag(S) V^T unchanged while making factors
    comparable across code paths.
    """
    for j in range(V.shape[1]):
        col = V[:, j]
        nz = np.flatnonzero(col)
        if nz.size and col[nz[0]] < 0.0:
            V[:, j] = -col
            U[:, j] = -U[:, j]


def orth(X: np.ndarray) -> np.ndarray:
    """Orthonormal basis of range(X) via reduced QR.

    Requires m >= n and numerically full column rank; a column norm
    collapsing below ORTH_RANK_TOL * ||X||_F during factorization raises
    RankDeficiencyError.
    """
    X = _check_matrix(X, "orth input")
    m, n = X.shape
    if m < n:
        raise ValueError(f"orth requires m >= n, got {m}x{n}")
    scale = np.linalg.norm(X)
    if scale == 0.0:
        raise RankDeficiencyError("cannot orthonormalize a zero matrix")
    Q, R = np.linalg.qr(X, mode="reduced")
    rdiag = np.abs(np.diag(R))
    bad = np.flatnonzero(rdiag < ORTH_RANK_TOL * scale)
    if bad.size:
        raise RankDeficiencyError(
            f"column norm collapse at column {bad[0]} "
            f"(|R[{bad[0]},{bad[0]}]| = {rdiag[bad[0]]:.3e} < "
            f"{ORTH_RANK_TOL:.0e} * ||X||_F = {ORTH_RANK_TOL * scale:.3e})"
        )
    return Q


def lu_pl(X: np.ndarray) -> np.ndarray:
    """Permuted lower-triangular LU factor spanning range(X).

    Partial pivoting by maximum absolute value; returns the m x n factor
    that is unit-lower-triangular up to a row permutation.  For full
    column rank X its columns span range(X).  A pivot with magnitude
    below LU_PIVOT_TOL * max|X| raises RankDeficiencyError.
    """
    X = _check_matrix(X, "lu input")
    m, n = X.shape
    if m < n:
        raise ValueError(f"lu_pl requires m >= n, got {m}x{n}")
    scale = np.max(np.abs(X))
    if scale == 0.0:
        raise RankDeficiencyError("cannot LU-factor a zero matrix")
    PL, U = scipy.linalg.lu(X, permute_l=True)
    pivots = np.abs(np.diag(U))
    tol = LU_PIVOT_TOL * scale
    bad = np.flatnonzero(pivots < tol)
    if bad.size:
        raise RankDeficiencyError(
            f"zero pivot at column {bad[0]} (|pivot| = {pivots[bad[0]]:.3e} < {tol:.3e})"
        )
    return PL


def sym_eig(B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    The input is symmetrized as (B + B^T)/2 before factorization.
    Returns (V, d) with B = V diag(d) V^T and V orthogonal.  Raises
    NumericalError if the underlying iterative solver fails to converge
    within LAPACK's internal sweep cap.
    """
    B = _check_matrix(B, "sym_eig input")
    if B.shape[0] != B.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got {B.shape}")
    Bsym = 0.5 * (B + B.T)
    try:
        d, V = np.linalg.eigh(Bsym)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigensolver did not converge: {exc}") from exc
    return V, d


def eig_svd(A: np.ndarray) -> SvdResult:
    """Economic SVD of a tall full-column-rank matrix via its Gram matrix.

    Computes B = A^T A, eigendecomposes it, takes S = sqrt(d) and
    U = A V S^{-1}.  Because the n x n Gram matrix is small whenever
    m >> n, this is much cheaper than a direct SVD.  Singular values are
    returned in ascending order.

    Negative Gram eigenvalues from roundoff are clamped to zero before
    the square root; any eigenvalue at or below GRAM_RANK_TOL times the
    largest instead raises RankDeficiencyError (inverting such values
    would amplify noise), naming the first offending index.
    """
    A = _check_matrix(A, "eig_svd input")
    m, n = A.shape
    if m < n:
        raise ValueError(f"eig_svd requires m >= n, got {m}x{n}")
    V, d = sym_eig(A.T @ A)
    dmax = d[-1]
    if dmax <= 0.0:
        raise RankDeficiencyError("Gram matrix has no positive eigenvalue (zero input?)")
    bad = np.flatnonzero(d <= GRAM_RANK_TOL * dmax)
    if bad.size:
        raise RankDeficiencyError(
            f"Gram eigenvalue {bad.size} of {n} at/below rank tolerance "
            f"(index {bad[0]}: {d[bad[0]]:.3e} <= {GRAM_RANK_TOL:.0e} * {dmax:.3e})"
        )
    S = np.sqrt(np.maximum(d, 0.0))
    U = A @ (V / S)
    _fix_signs(U, V)
    return SvdResult(U, S, V, "ascending")


def oracle_svd(A: np.ndarray) -> SvdResult:
    """Full economic SVD by dense bidiagonalization; ground truth for tests.

    Descending order.  Refuses matrices with min(m, n) > ORACLE_SVD_CAP;
    this path densifies and is meant for desk-scale verification only.
    """
    A = _check_matrix(A, "oracle_svd input")
    m, n = A.shape
    if min(m, n) > ORACLE_SVD_CAP:
        raise SizeCapError(
            f"oracle SVD capped at min(m,n) <= {ORACLE_SVD_CAP}, got {m}x{n}"
        )
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    V = Vt.T.copy()
    U = U.copy()
    _fix_signs(U, V)
    return SvdResult(U, S, V, "descending")
