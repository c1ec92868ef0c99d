"""Singular value thresholding for matrix completion.

One engine drives both entry points.  The reference loop recomputes a
truncated SVD of the iterate Y every step, through a pluggable backend
(dense oracle at desk scale, or the block-Krylov randomized SVD).  The
fast loop adds two accelerations on top of the BKI backend: subspace
recycling (restart the SVD from the previous iteration's basis instead
of sketching anew) and an adaptive power parameter driven by the
residual trend.

The iterate Y lives on the fixed observation pattern for the whole run:
updates touch its value buffer in place and never allocate structure.
"""

from __future__ import annotations

import csv
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, RankDeficiencyError
from .linalg import SvdResult, eig_svd, oracle_svd
from .rng import RngState
from .rsvd import RsvdParams, Subspace, rsvd_bki
from .sparse import (
    ObservationSet,
    SparseMatrix,
    frobenius,
    project_pattern,
    spectral_norm_est,
    spmm_t,
    update_pattern_values,
)

_STRATEGIES = ("none", "reuse-q", "reuse-u")
_BACKENDS = ("oracle", "rsvd-bki")


@dataclass
class SvtParams:
    """Completion run controls.

    tau / delta default to the standard choices for the problem at
    hand (5*n and 1.2*m*n/|observed|) when left as None.  epsilon and
    i_reuse carry image-workload defaults; rating-style runs usually
    want epsilon around 0.17 and i_reuse around 50.
    """

    tau: Optional[float] = None
    delta: Optional[float] = None
    l: int = 5
    epsilon: float = 0.05
    i_max: int = 500
    i_reuse: int = 100
    q_reuse: int = 10
    strategy: str = "none"
    p0: int = 3
    p_min: int = 1
    s: int = 5
    seed: int = 0
    delta_decay: bool = False  # optional geometric step decay, 0.999^i

    def __post_init__(self):
        if self.tau is not None and self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.delta is not None and self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.l < 1:
            raise ValueError(f"rank increment l must be >= 1, got {self.l}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.i_max < 1:
            raise ValueError(f"i_max must be >= 1, got {self.i_max}")
        if self.i_reuse < 1:
            raise ValueError(f"i_reuse must be >= 1, got {self.i_reuse}")
        if self.q_reuse < 0:
            raise ValueError(f"q_reuse must be >= 0, got {self.q_reuse}")
        if self.strategy not in _STRATEGIES:
            raise ValueError(f"strategy must be one of {_STRATEGIES}, got {self.strategy!r}")
        if self.p0 < 1 or self.p_min < 1:
            raise ValueError("p0 and p_min must be >= 1")
        if self.s < 0:
            raise ValueError(f"oversampling s must be >= 0, got {self.s}")


@dataclass
class SvtState:
    """Mutable loop state threaded through one completion run."""

    Y: SparseMatrix
    r_prev: int = 0
    p: int = 3
    q: int = 0
    streak: int = 0  # consecutive non-increasing residuals
    err_history: list = field(default_factory=list)
    cached_q: Optional[Subspace] = None
    cached_u: Optional[np.ndarray] = None
    iteration: int = 0
    oracle_cache: Optional[SvdResult] = None
    svd_calls: int = 0
    p_min: int = 1
    seed_rng: Optional[RngState] = None


@dataclass
class TraceRecord:
    iteration: int
    k: int
    r: int
    p: int
    q: int
    residual: float
    svd_source: str  # source of the iteration's final inner SVD
    wall_time: float


@dataclass
class CompletionResult:
    """Factors of the completed matrix plus run diagnostics.

    S holds the post-shrinkage singular values (all positive); the
    completed matrix is U diag(S) V^T.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    rank: int
    iterations: int
    converged: bool
    residual: float
    trace: list
    events: list
    svd_time: float
    update_time: float
    total_time: float
    hard_stops: int = 0
    fallbacks: int = 0

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T

    def predict(self, rows, cols) -> np.ndarray:
        """Completed-matrix entries at the given positions."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if self.rank == 0:
            return np.zeros(rows.shape[0])
        return np.einsum("er,er->e", self.U[rows] * self.S, self.V[cols])


def shrink(svd: SvdResult, tau: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Soft-threshold a descending SVD at level tau.

    Keeps the r values strictly above tau, subtracts tau from them, and
    truncates the factors to match.  r = 0 is legal and yields empty
    factors (the zero matrix), not an error.
    """
    if svd.order != "descending":
        raise ValueError("shrink expects a descending SVD")
    r = int(np.count_nonzero(svd.S > tau))
    return svd.U[:, :r].copy(), svd.S[:r] - tau, svd.V[:, :r].copy(), r


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute error between two equal-length vectors."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("mae of empty vectors is undefined")
    return float(np.mean(np.abs(pred - truth)))


def adapt_power(state: SvtState, new_err: float) -> int:
    """Residual-driven power update.

    An error increase bumps p by one and resets the decrease streak; a
    non-increase (the first observation counts) extends the streak, and
    ten in a row retire one power step, never below state.p_min.
    """
    if state.err_history and new_err > state.err_history[-1]:
        state.p += 1
        state.streak = 0
    else:
        state.streak += 1
        if state.streak >= 10:
            state.p = max(state.p_min, state.p - 1)
            state.streak = 0
    state.err_history.append(new_err)
    return state.p


def recycle_q(cached: Subspace, Y: SparseMatrix, k: int) -> SvdResult:
    """Rank-k SVD of Y restarted from a cached orthonormal basis.

    Projects Y onto the cached subspace (B = Q^T Y), solves the small
    problem, and lifts back.  Exact while Y still lies in range(Q);
    accuracy degrades smoothly with the drift of Y since the cache.
    k must not exceed the cached width; the caller should refresh then.
    """
    width = cached.Q.shape[1]
    if k > width:
        raise ValueError(f"requested rank {k} exceeds cached subspace width {width}")
    if k == 0:
        m, n = cached.Q.shape[0], Y.cols
        return SvdResult(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)), "descending")
    B = spmm_t(Y, cached.Q).T  # width x n
    small = eig_svd(B.T)
    ind = slice(width - k, width)
    return SvdResult(
        cached.Q @ small.V[:, ind], small.S[ind].copy(), small.U[:, ind], "ascending"
    ).descending()


def recycle_u(U_prev: np.ndarray, Y: SparseMatrix) -> SvdResult:
    """SVD of Y recomputed inside the span of the previous left factors.

    Three steps: B = U_prev^T Y, the Gram-route SVD of B^T, then the
    rotation U = U_prev U_small.  Width equals U_prev's column count.
    Cheaper than recycle_q (the basis is k wide, not (p+1)(k+s)) but
    captures less of Y.  Rank deficiency of the projection propagates;
    it signals the cache is stale and a fresh sketch is due.
    """
    k = U_prev.shape[1]
    if k == 0:
        return SvdResult(
            np.zeros((U_prev.shape[0], 0)), np.zeros(0), np.zeros((Y.cols, 0)), "descending"
        )
    try:
        B = spmm_t(Y, U_prev).T  # k x n
        small = eig_svd(B.T)
    except RankDeficiencyError as exc:
        raise RankDeficiencyError(
            f"projection onto cached U lost rank ({exc}); refresh the subspace"
        ) from exc
    return SvdResult(
        U_prev @ small.V, small.S.copy(), small.U.copy(), "ascending"
    ).descending()


def _inner_svd(
    state: SvtState, params: SvtParams, backend: str, strategy: str, k: int, events: list
) -> tuple[SvdResult, str]:
    """One truncated SVD of the current Y at rank k, by the cheapest
    permitted route.  Returns the descending result and its source tag."""
    Y = state.Y
    min_dim = min(Y.shape)
    state.svd_calls += 1
    if backend == "oracle":
        if state.oracle_cache is None:
            state.oracle_cache = oracle_svd(Y.densify())
        return state.oracle_cache.truncate(k), "oracle"

    cache_ok = False
    if strategy == "reuse-q":
        cache_ok = state.cached_q is not None and k <= state.cached_q.Q.shape[1]
    elif strategy == "reuse-u":
        cache_ok = state.cached_u is not None and k <= state.cached_u.shape[1]
    recycle_allowed = (
        strategy != "none"
        and state.iteration >= params.i_reuse
        and state.q < params.q_reuse
        and cache_ok
    )
    if recycle_allowed:
        try:
            if strategy == "reuse-q":
                res = recycle_q(state.cached_q, Y, k)
                source = "recycle-q"
            else:
                res = recycle_u(state.cached_u, Y)
                source = "recycle-u"
            state.q += 1
            if strategy == "reuse-u":
                state.cached_u = res.U
            return res, source
        except RankDeficiencyError:
            events.append(f"i={state.iteration} k={k}: stale subspace, refreshing")

    # fresh sketch; clamp p so the Krylov width fits the matrix
    width_budget = min_dim // (k + params.s) - 1
    if width_budget < 1:
        # matrix too small for even one Krylov block pair: dense fallback
        events.append(f"i={state.iteration} k={k}: BKI width clamp, dense SVD")
        full = oracle_svd(Y.densify())
        res = full.truncate(k)
        state.q = 0
        if strategy == "reuse-u":
            state.cached_u = res.U
        return res, "oracle"
    p_eff = max(1, min(state.p, width_budget))
    rp = RsvdParams(k=k, p=p_eff, s=params.s, seed=state.seed_rng.spawn(state.svd_calls).seed)
    res, sub = rsvd_bki(Y, rp, allow_fallback=True)
    state.q = 0
    if sub.fallbacks:
        events.append(
            f"i={state.iteration} k={k}: {sub.fallbacks} dense fallback(s) in BKI"
        )
    if strategy == "reuse-q":
        state.cached_q = sub
    if strategy == "reuse-u":
        state.cached_u = res.U
    return res, "bki"


def _svt_loop(
    obs: ObservationSet, params: SvtParams, backend: str, strategy: str
) -> CompletionResult:
    if backend not in _BACKENDS:
        raise ValueError(f"backend must be one of {_BACKENDS}, got {backend!r}")
    t_start = time.perf_counter()
    phi = obs.train_matrix()
    if phi.nnz == 0:
        raise DataError("no observed entries to complete from")
    m, n = phi.shape
    min_dim = min(m, n)
    m_vals = phi.data.copy()
    m_norm = frobenius(m_vals)
    if m_norm == 0.0:
        raise DataError("observed entries are all zero; nothing to recover")
    tau = params.tau if params.tau is not None else 5.0 * n
    delta = params.delta if params.delta is not None else 1.2 * m * n / phi.nnz

    rng = RngState(params.seed)
    norm2 = spectral_norm_est(phi, rng.spawn(1))
    c = math.ceil(tau / (delta * norm2))
    # Y shares the pattern arrays with phi; only its value buffer is new
    Y = SparseMatrix(m, n, phi.indptr, phi.indices, c * delta * m_vals)

    state = SvtState(Y=Y, p=params.p0, p_min=params.p_min, seed_rng=rng)
    trace: list[TraceRecord] = []
    events: list[str] = []
    svd_time = 0.0
    update_time = 0.0
    hard_stops = 0
    fallbacks = 0
    converged = False
    factors = (np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)), 0)
    resid = float("inf")

    for i in range(1, params.i_max + 1):
        state.iteration = i
        state.oracle_cache = None  # Y changed since last iteration
        t_iter = time.perf_counter()
        k = state.r_prev + 1
        source = ""
        # escalate the computed rank until the tail falls under tau
        while True:
            k_eff = min(k, min_dim)
            t0 = time.perf_counter()
            res, source = _inner_svd(state, params, backend, strategy, k_eff, events)
            svd_time += time.perf_counter() - t0
            smallest = res.S[k_eff - 1]
            if smallest <= tau:
                break
            if k_eff == min_dim:
                hard_stops += 1
                events.append(f"i={i}: rank escalation hit min(m, n) = {min_dim}")
                break
            k = k + params.l
        U_s, S_s, V_s, r = shrink(res, tau)
        state.r_prev = r
        factors = (U_s, S_s, V_s, r)

        t1 = time.perf_counter()
        x_vals = (
            project_pattern(U_s, S_s, V_s, phi) if r > 0 else np.zeros(phi.nnz)
        )
        resid = frobenius(x_vals - m_vals) / m_norm
        trace.append(
            TraceRecord(i, k_eff, r, state.p, state.q, resid, source, time.perf_counter() - t_iter)
        )
        if resid < params.epsilon:
            converged = True
            update_time += time.perf_counter() - t1
            break
        step = delta * (0.999**i) if params.delta_decay else delta
        update_pattern_values(Y, step * (m_vals - x_vals))
        update_time += time.perf_counter() - t1
        if backend == "rsvd-bki":
            adapt_power(state, resid)

    U_s, S_s, V_s, r = factors
    return CompletionResult(
        U=U_s,
        S=S_s,
        V=V_s,
        rank=r,
        iterations=len(trace),
        converged=converged,
        residual=resid,
        trace=trace,
        events=events,
        svd_time=svd_time,
        update_time=update_time,
        total_time=time.perf_counter() - t_start,
        hard_stops=hard_stops,
        fallbacks=fallbacks,
    )


def svt_reference(
    obs: ObservationSet, params: SvtParams, backend: str = "oracle"
) -> CompletionResult:
    """The plain thresholding loop with a pluggable SVD backend.

    `oracle` densifies Y each iteration for an exact truncated SVD
    (desk scale only, guarded by the dense solver's size cap);
    `rsvd-bki` uses the randomized backend without recycling.  Reaching
    i_max without meeting epsilon flags the result non-converged
    rather than raising.
    """
    return _svt_loop(obs, params, backend, "none")


def svt_fast(obs: ObservationSet, params: SvtParams) -> CompletionResult:
    """The accelerated loop: BKI backend, subspace recycling, adaptive p.

    Recycling starts once the iteration index reaches i_reuse and is
    forced fresh every q_reuse consecutive reuses (and whenever the
    needed rank outgrows the cached basis).  params.strategy picks the
    recycled object: "reuse-q" restarts from the cached sketch basis,
    "reuse-u" rotates the previous left factors, "none" disables
    recycling entirely.
    """
    return _svt_loop(obs, params, "rsvd-bki", params.strategy)


# ---------------------------------------------------------- serialization


def write_trace_csv(path: str, trace: list) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "k", "r", "p", "q", "residual", "svd_source", "wall_time"])
        for t in trace:
            w.writerow(
                [t.iteration, t.k, t.r, t.p, t.q, f"{t.residual:.12g}", t.svd_source, f"{t.wall_time:.6f}"]
            )


_FACTOR_MAGIC = b"LRFC"
_FACTOR_VERSION = 1


def write_factors(path: str, result: CompletionResult) -> None:
    """Binary factor container: magic, version, dims, then row-major
    float64 blocks U (m x r), S (r), V (n x r), little-endian."""
    m, r = result.U.shape
    n = result.V.shape[0]
    with open(path, "wb") as fh:
        fh.write(_FACTOR_MAGIC)
        fh.write(struct.pack("<I", _FACTOR_VERSION))
        fh.write(struct.pack("<QQQ", m, n, r))
        fh.write(np.ascontiguousarray(result.U, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(result.S, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(result.V, dtype="<f8").tobytes())


def read_factors(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a factor container back as (U, S, V)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FACTOR_MAGIC:
            raise DataError(f"not a factor container (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _FACTOR_VERSION:
            raise DataError(f"unsupported factor container version {version}")
        header = fh.read(24)
        if len(header) != 24:
            raise DataError("factor container truncated in header")
        m, n, r = struct.unpack("<QQQ", header)

        def block(count, shape):
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise DataError("factor container truncated")
            return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

        U = block(m * r, (m, r))
        S = block(r, (r,))
        V = block(n * r, (n, r))
        if fh.read(1):
            raise DataError("trailing bytes in factor container")
    return U, S, V


def write_factor_mm(path: str, X: np.ndarray) -> None:
    """Dense MatrixMarket array format (column-major values)."""
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{X.shape[0]} {X.shape[1]}\n")
        for v in X.ravel(order="F"):
            fh.write(f"{v:.17g}\n")


def read_factor_mm(path: str) -> np.ndarray:
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        header = fh.readline().strip().lower().split()
        if header != ["%%matrixmarket", "matrix", "array", "real", "general"]:
            raise DataError("unsupported MatrixMarket array header")
        dims = None
        vals: list[float] = []
        for line in fh:
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            if dims is None:
                parts = s.split()
                if len(parts) != 2:
                    raise DataError(f"bad array size line: {s!r}")
                dims = (int(parts[0]), int(parts[1]))
            else:
                vals.append(float(s))
    if dims is None or len(vals) != dims[0] * dims[1]:
        raise DataError("array file truncated")
    return np.array(vals).reshape(dims, order="F")
