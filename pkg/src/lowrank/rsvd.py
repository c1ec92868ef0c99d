"""Randomized truncated SVD for sparse matrices.

Three sketch-based algorithms, all built on the same pattern: project
the matrix onto a random subspace, orthonormalize, and solve a small
dense problem.

- rsvd_basic: power iteration with QR re-orthonormalization after every
  product, dense SVD of the projected matrix.
- rsvd_pi: power iteration with LU replacing QR inside the loop and the
  Gram-matrix SVD everywhere else; mathematically equivalent to
  rsvd_basic, cheaper per step.
- rsvd_bki: block Krylov variant that keeps every intermediate block
  and orthonormalizes the concatenation; fastest accuracy growth in p.

All public results have descending singular values.  The ascending
order of the Gram-route SVD is internal; the top-k selection windows
account for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficiencyError
from .linalg import SvdResult, eig_svd, lu_pl, oracle_svd, orth
from .rng import RngState, gaussian_matrix
from .sparse import SparseMatrix, frobenius, spmm, spmm_t


@dataclass
class RsvdParams:
    """Knobs for the randomized SVD family.

    k is the target rank, s the oversampling margin added to every
    sketch, p the power/iteration parameter, seed the sketch seed.
    """

    k: int
    p: int
    s: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"rank k must be >= 1, got {self.k}")
        if self.s < 0:
            raise ValueError(f"oversampling s must be >= 0, got {self.s}")
        if self.p < 0:
            raise ValueError(f"power parameter p must be >= 0, got {self.p}")

    def check_against(self, A: SparseMatrix, krylov: bool = False) -> None:
        width = self.k + self.s
        if krylov:
            width *= self.p + 1
        if width > min(A.rows, A.cols):
            raise ValueError(
                f"sketch width {width} exceeds min(m, n) = {min(A.rows, A.cols)}; "
                f"reduce k, s or p"
            )


@dataclass
class Subspace:
    """An orthonormal basis captured during a randomized SVD run.

    Q spans the sketched subspace (the full sketch width, before the
    top-k window is cut); provenance records which iteration scheme
    built it, p the power parameter used, fallbacks how many
    orthonormalization/SVD steps had to reroute through the dense
    oracle because a factor lost full rank.
    """

    Q: np.ndarray
    provenance: str  # "pi" or "bki"
    p: int
    fallbacks: int = 0


class _FallbackCounter:
    __slots__ = ("enabled", "count")

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.count = 0


def _orthonormalize(X: np.ndarray, fb: _FallbackCounter, advice: str) -> np.ndarray:
    try:
        return orth(X)
    except RankDeficiencyError as exc:
        if not fb.enabled:
            raise RankDeficiencyError(f"{exc}; {advice}") from exc
        fb.count += 1
        return oracle_svd(X).U


def _lu_factor(X: np.ndarray, fb: _FallbackCounter, advice: str) -> np.ndarray:
    try:
        return lu_pl(X)
    except RankDeficiencyError as exc:
        if not fb.enabled:
            raise RankDeficiencyError(f"{exc}; {advice}") from exc
        fb.count += 1
        return oracle_svd(X).U


def _gram_basis(X: np.ndarray, fb: _FallbackCounter, advice: str) -> np.ndarray:
    try:
        return eig_svd(X).U
    except RankDeficiencyError as exc:
        if not fb.enabled:
            raise RankDeficiencyError(f"{exc}; {advice}") from exc
        fb.count += 1
        return oracle_svd(X).U


def _gram_svd_ascending(X: np.ndarray, fb: _FallbackCounter, advice: str) -> SvdResult:
    try:
        return eig_svd(X)
    except RankDeficiencyError as exc:
        if not fb.enabled:
            raise RankDeficiencyError(f"{exc}; {advice}") from exc
        fb.count += 1
        return oracle_svd(X).ascending()


def _small_dense_svd(B: np.ndarray) -> SvdResult:
    # B is (sketch width) x n; the dense solver sees only the small side.
    return oracle_svd(B)


def rsvd_basic(
    A: SparseMatrix, params: RsvdParams, allow_fallback: bool = False
) -> tuple[SvdResult, Subspace]:
    """Rank-k randomized SVD, orthonormalizing after every product.

    Sketch Q = orth(A Omega), then p rounds of Q = orth(A orth(A^T Q)),
    then a dense SVD of B = Q^T A.  The returned Subspace carries the
    full (k+s)-column basis.

    Raises RankDeficiencyError when the sketch loses full column rank
    (matrix rank < k+s); pass allow_fallback=True to reroute those
    steps through the dense oracle instead, counted on the Subspace.
    """
    params.check_against(A)
    fb = _FallbackCounter(allow_fallback)
    advice = "matrix rank is likely below k+s, reduce k"
    rng = RngState(params.seed)
    omega = gaussian_matrix(rng, A.cols, params.k + params.s)
    Q = _orthonormalize(spmm(A, omega), fb, advice)
    for _ in range(params.p):
        G = _orthonormalize(spmm_t(A, Q), fb, advice)
        Q = _orthonormalize(spmm(A, G), fb, advice)
    B = spmm_t(A, Q).T
    small = _small_dense_svd(B)
    U = Q @ small.U
    res = SvdResult(
        U[:, : params.k],
        small.S[: params.k].copy(),
        small.V[:, : params.k],
        "descending",
    )
    return res, Subspace(Q, "pi", params.p, fb.count)


def rsvd_pi(
    A: SparseMatrix, params: RsvdParams, allow_fallback: bool = False
) -> tuple[SvdResult, Subspace]:
    """Rank-k randomized SVD with LU-renormalized power iteration.

    The power loop keeps the iterate well-scaled with an LU factor
    instead of QR; only the final basis is orthonormalized, through the
    Gram-matrix SVD.  Equivalent to rsvd_basic in exact arithmetic.
    """
    params.check_against(A)
    fb = _FallbackCounter(allow_fallback)
    advice = "increase s or reduce k"
    rng = RngState(params.seed)
    omega = gaussian_matrix(rng, A.cols, params.k + params.s)
    Q = spmm(A, omega)
    for i in range(params.p + 1):
        if i < params.p:
            Q = _lu_factor(Q, fb, advice)
        else:
            Q = _gram_basis(Q, fb, advice)
            break
        Q = spmm(A, spmm_t(A, Q))
    B = spmm_t(A, Q).T
    small = _gram_svd_ascending(B.T, fb, advice)
    # ascending order: the top k live in the last k of the k+s columns
    ind = slice(params.s, params.k + params.s)
    res = SvdResult(
        Q @ small.V[:, ind], small.S[ind].copy(), small.U[:, ind], "ascending"
    ).descending()
    return res, Subspace(Q, "pi", params.p, fb.count)


def rsvd_bki(
    A: SparseMatrix, params: RsvdParams, allow_fallback: bool = False
) -> tuple[SvdResult, Subspace]:
    """Rank-k randomized SVD by block Krylov iteration.

    Accumulates the LU-renormalized blocks H_0 = lu(A Omega),
    H_i = lu(A A^T H_{i-1}) for i = 1..p, orthonormalizes the
    concatenation [H_0 ... H_p], and solves the projected problem.  The
    enlarged subspace converges in fewer iterations than plain power
    iteration at the cost of a wider dense stage.

    The returned Subspace carries the full (k+s)(p+1)-column basis.
    """
    params.check_against(A, krylov=True)
    fb = _FallbackCounter(allow_fallback)
    advice = "Krylov blocks are near-collinear, reduce p or use a larger matrix"
    rng = RngState(params.seed)
    width = params.k + params.s
    omega = gaussian_matrix(rng, A.cols, width)
    blocks = [_lu_factor(spmm(A, omega), fb, advice)]
    for _ in range(params.p):
        blocks.append(_lu_factor(spmm(A, spmm_t(A, blocks[-1])), fb, advice))
    H = np.hstack(blocks)
    Q = _orthonormalize(H, fb, advice)
    B = spmm_t(A, Q).T
    small = _gram_svd_ascending(B.T, fb, advice)
    total = width * (params.p + 1)
    ind = slice(total - params.k, total)
    res = SvdResult(
        Q @ small.V[:, ind], small.S[ind].copy(), small.U[:, ind], "ascending"
    ).descending()
    return res, Subspace(Q, "bki", params.p, fb.count)


def qb_error(A: SparseMatrix, res: SvdResult) -> float:
    """Relative Frobenius error ||A - U S V^T||_F / ||A||_F.

    Expands the square as ||A||^2 - 2<A V S, U> + ||S||^2 so the
    difference is never densified; tiny negative squares from roundoff
    clamp to zero.  Orthonormal U, V assumed (true for all results
    produced here).
    """
    U, S, V = res.U, res.S, res.V
    if U.shape[0] != A.rows or V.shape[0] != A.cols:
        raise ValueError(
            f"factor dims {U.shape[0]}x{V.shape[0]} do not match matrix {A.shape}"
        )
    if U.shape[1] != S.shape[0] or V.shape[1] != S.shape[0]:
        raise ValueError("factor rank mismatch")
    a_norm = frobenius(A.data)
    if a_norm == 0.0:
        raise ValueError("relative error undefined for a zero matrix")
    cross = float(np.sum(spmm(A, V) * S * U))
    sq = a_norm * a_norm - 2.0 * cross + float(S @ S)
    return float(np.sqrt(max(sq, 0.0))) / a_norm
