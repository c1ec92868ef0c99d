"""Fixed-pattern CSR storage and the kernels that dominate runtime.

The sparsity pattern is semantic here: it encodes the observation set,
so explicit zeros are kept and iterative updates touch values only,
never structure.  Products with dense blocks delegate to scipy's CSR
kernel (single-threaded C, fixed row-major accumulation order); the
transpose product goes through a lazily built transpose index instead
of materializing A^T.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse

from .errors import DataError
from .rng import RngState

# Entries processed per block when sampling a low-rank product on a
# pattern; bounds scratch memory at CHUNK * rank floats.
_PROJECT_CHUNK = 1 << 18

# Power-iteration controls for the spectral norm estimate.
_SPECTRAL_TOL = 1e-3
_SPECTRAL_MAX_ITERS = 200


class SparseMatrix:
    """Sparse matrix in CSR form with an immutable pattern.

    Attributes
    ----------
    rows, cols : int
        Dimensions.
    indptr, indices : int64 ndarrays
        CSR row offsets and column indices.  Column indices are strictly
        increasing within each row.
    data : float64 ndarray
        Values aligned with `indices`.  Explicit zeros are legal and
        preserved.  The only sanctioned mutation is through
        `update_pattern_values`, which requires exclusive access.
    """

    def __init__(self, rows: int, cols: int, indptr, indices, data):
        self.rows = int(rows)
        self.cols = int(cols)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self._validate()
        self._tperm = None
        self._t_indptr = None
        self._t_indices = None
        self._coo_rows = None

    def _validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise DataError(f"matrix dims must be positive, got {self.rows}x{self.cols}")
        if self.indptr.shape != (self.rows + 1,):
            raise DataError(
                f"indptr length {self.indptr.shape[0]} != rows + 1 = {self.rows + 1}"
            )
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise DataError("row offsets must start at 0 and be monotone")
        nnz = int(self.indptr[-1])
        if self.indices.shape != (nnz,) or self.data.shape != (nnz,):
            raise DataError("indices/data length must equal last row offset")
        if nnz:
            if self.indices.min() < 0 or self.indices.max() >= self.cols:
                raise DataError("column index out of range")
            # strictly increasing within each row <=> diffs only break at
            # row boundaries
            diffs = np.diff(self.indices)
            starts = self.indptr[1:-1]  # positions where a new row begins
            boundary = np.zeros(max(nnz - 1, 0), dtype=bool)
            boundary[starts[(starts > 0) & (starts < nnz)] - 1] = True
            if np.any((diffs <= 0) & ~boundary):
                raise DataError("column indices must strictly increase within a row")
        if not np.isfinite(self.data).all():
            raise DataError("matrix values must be finite")

    # ------------------------------------------------------ construction

    @classmethod
    def from_coo(cls, rows: int, cols: int, i, j, v) -> "SparseMatrix":
        """Build from coordinate triples; duplicates are an error."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        v = np.asarray(v, dtype=np.float64)
        if not (i.shape == j.shape == v.shape) or i.ndim != 1:
            raise DataError("coordinate arrays must be 1-D and equal length")
        if i.size:
            if i.min() < 0 or i.max() >= rows or j.min() < 0 or j.max() >= cols:
                raise DataError("coordinate out of range")
        order = np.lexsort((j, i))
        i, j, v = i[order], j[order], v[order]
        if i.size > 1:
            dup = (np.diff(i) == 0) & (np.diff(j) == 0)
            if np.any(dup):
                k = int(np.flatnonzero(dup)[0])
                raise DataError(f"duplicate entry at ({i[k]}, {j[k]})")
        indptr = np.zeros(rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(i, minlength=rows), out=indptr[1:])
        return cls(rows, cols, indptr, j, v)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    # --------------------------------------------------------- structure

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def coo_rows(self) -> np.ndarray:
        """Row index of each stored entry, in CSR storage order."""
        if self._coo_rows is None:
            self._coo_rows = np.repeat(
                np.arange(self.rows, dtype=np.int64), np.diff(self.indptr)
            )
        return self._coo_rows

    def _transpose_index(self):
        # One stable sort by column: within CSR order rows are already
        # nondecreasing, so the result is exact transpose-CSR order.
        if self._tperm is None:
            self._tperm = np.argsort(self.indices, kind="stable")
            counts = np.bincount(self.indices, minlength=self.cols)
            indptr_t = np.zeros(self.cols + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr_t[1:])
            self._t_indptr = indptr_t
            self._t_indices = self.coo_rows()[self._tperm]
        return self._tperm, self._t_indptr, self._t_indices

    def _scipy(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.csr_matrix(
            (self.data, self.indices, self.indptr), shape=self.shape, copy=False
        )

    def densify(self) -> np.ndarray:
        """Dense copy; intended for small matrices and tests."""
        out = np.zeros(self.shape)
        out[self.coo_rows(), self.indices] = self.data
        return out


def spmm(A: SparseMatrix, X: np.ndarray) -> np.ndarray:
    """A @ X for dense X, deterministic row-major accumulation."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or A.cols != X.shape[0]:
        raise ValueError(f"spmm dimension mismatch: {A.shape} @ {X.shape}")
    return A._scipy() @ X


def spmm_t(A: SparseMatrix, X: np.ndarray) -> np.ndarray:
    """A.T @ X via the transpose index; A^T is never materialized densely."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or A.rows != X.shape[0]:
        raise ValueError(f"spmm_t dimension mismatch: {A.shape}^T @ {X.shape}")
    perm, indptr_t, indices_t = A._transpose_index()
    At = scipy.sparse.csr_matrix(
        (A.data[perm], indices_t, indptr_t), shape=(A.cols, A.rows), copy=False
    )
    return At @ X


def _project_entries(U, S, V, rows, cols) -> np.ndarray:
    out = np.empty(rows.shape[0])
    for start in range(0, rows.shape[0], _PROJECT_CHUNK):
        sl = slice(start, min(start + _PROJECT_CHUNK, rows.shape[0]))
        out[sl] = np.einsum("er,er->e", U[rows[sl]] * S, V[cols[sl]])
    return out


def project_pattern(U, S, V, pattern: SparseMatrix) -> np.ndarray:
    """Entries of U diag(S) V^T on the pattern, in CSR storage order.

    Cost O(nnz * r); the product is never densified.
    """
    U, S, V = np.asarray(U), np.asarray(S), np.asarray(V)
    if U.shape[0] != pattern.rows or V.shape[0] != pattern.cols:
        raise ValueError("factor dims do not match pattern dims")
    if U.shape[1] != S.shape[0] or V.shape[1] != S.shape[0]:
        raise ValueError("factor rank mismatch")
    return _project_entries(U, S, V, pattern.coo_rows(), pattern.indices)


def project_observed(U, S, V, obs: "ObservationSet") -> np.ndarray:
    """Sampled entries of U diag(S) V^T on the train split of obs."""
    U, S, V = np.asarray(U), np.asarray(S), np.asarray(V)
    if U.shape[0] != obs.m or V.shape[0] != obs.n:
        raise ValueError("factor dims do not match observation dims")
    if U.shape[1] != S.shape[0] or V.shape[1] != S.shape[0]:
        raise ValueError("factor rank mismatch")
    mask = obs.split == ObservationSet.TRAIN
    return _project_entries(U, S, V, obs.rows[mask], obs.cols[mask])


def update_pattern_values(Y: SparseMatrix, delta_vals: np.ndarray) -> SparseMatrix:
    """Add delta_vals to Y's stored values, in place.

    The pattern (offsets, indices, and the value buffer itself) is
    untouched; only the numbers in the existing buffer change.  Returns
    Y for chaining.
    """
    delta_vals = np.asarray(delta_vals, dtype=np.float64)
    if delta_vals.shape != (Y.nnz,):
        raise ValueError(f"delta length {delta_vals.shape} != nnz {Y.nnz}")
    Y.data += delta_vals
    return Y


def frobenius(values: np.ndarray) -> float:
    """Euclidean norm with scaled accumulation (no overflow at 1e200)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        return 0.0
    scale = np.max(np.abs(values))
    if scale == 0.0:
        return 0.0
    scaled = values / scale
    return float(scale * np.sqrt(scaled @ scaled))


def spectral_norm_est(A: SparseMatrix, rng: RngState) -> float:
    """Largest singular value of A, estimated by power iteration on A^T A.

    Stops when successive Rayleigh estimates agree to 1e-3 relative or
    after 200 iterations, and returns the larger of the last two
    estimates: a slight overestimate is the safe direction for the
    callers that divide by it.
    """
    if A.nnz < 1:
        raise ValueError("spectral norm estimate needs at least one stored entry")
    x = rng.normal_pairs(A.cols).reshape(A.cols, 1)
    nrm = np.linalg.norm(x)
    x /= nrm
    prev = 0.0
    curr = 0.0
    for _ in range(_SPECTRAL_MAX_ITERS):
        z = spmm_t(A, spmm(A, x))
        lam = float(x[:, 0] @ z[:, 0])  # Rayleigh quotient for A^T A
        prev, curr = curr, np.sqrt(max(lam, 0.0))
        znorm = np.linalg.norm(z)
        if znorm == 0.0:
            return 0.0  # x landed exactly in the null space
        x = z / znorm
        if abs(curr - prev) <= _SPECTRAL_TOL * max(curr, 1e-300):
            break
    return max(prev, curr)


class ObservationSet:
    """Coordinate samples of a partially observed matrix, split-tagged.

    Parameters
    ----------
    m, n : int
        Dimensions of the underlying matrix.
    rows, cols : int arrays
    values : float array
    split : uint8 array
        TRAIN (0) or TEST (1) per entry.  Duplicate (row, col) pairs
        within one split are rejected.
    """

    TRAIN = 0
    TEST = 1

    def __init__(self, m: int, n: int, rows, cols, values, split=None):
        self.m = int(m)
        self.n = int(n)
        self.rows = np.ascontiguousarray(rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(cols, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if split is None:
            split = np.zeros(self.rows.shape[0], dtype=np.uint8)
        self.split = np.ascontiguousarray(split, dtype=np.uint8)
        self._validate()

    def _validate(self) -> None:
        if self.m < 1 or self.n < 1:
            raise DataError(f"observation dims must be positive, got {self.m}x{self.n}")
        k = self.rows.shape[0]
        if not (self.cols.shape[0] == self.values.shape[0] == self.split.shape[0] == k):
            raise DataError("observation arrays must have equal length")
        if k:
            if self.rows.min() < 0 or self.rows.max() >= self.m:
                raise DataError("observation row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.n:
                raise DataError("observation col index out of range")
        if not np.isfinite(self.values).all():
            raise DataError("observation values must be finite")
        if np.any(self.split > 1):
            raise DataError("split tags must be 0 (train) or 1 (test)")
        for tag, name in ((self.TRAIN, "train"), (self.TEST, "test")):
            mask = self.split == tag
            key = self.rows[mask] * self.n + self.cols[mask]
            if key.size != np.unique(key).size:
                raise DataError(f"duplicate (row, col) within {name} split")

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def train_count(self) -> int:
        return int(np.count_nonzero(self.split == self.TRAIN))

    @property
    def test_count(self) -> int:
        return int(np.count_nonzero(self.split == self.TEST))

    def subset(self, tag: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, values) of one split, in stored order."""
        mask = self.split == tag
        return self.rows[mask], self.cols[mask], self.values[mask]

    def train_matrix(self) -> SparseMatrix:
        """The train split as a sparse matrix (the sampled input P(M))."""
        r, c, v = self.subset(self.TRAIN)
        return SparseMatrix.from_coo(self.m, self.n, r, c, v)


# ------------------------------------------------------- MatrixMarket io


def write_matrix_market(path: str, A: SparseMatrix) -> None:
    """Coordinate-format dump, 1-based indices, 17 significant digits."""
    rows = A.coo_rows()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.rows} {A.cols} {A.nnz}\n")
        for i, j, v in zip(rows, A.indices, A.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_matrix_market(path: str) -> SparseMatrix:
    """Parse a coordinate-format file written by write_matrix_market.

    Accepts any "matrix coordinate real general" file with %-comment
    lines.  Indices are 1-based in the file.  Malformed input raises
    DataError.
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        header = fh.readline()
        fields = header.strip().lower().split()
        expected = ["%%matrixmarket", "matrix", "coordinate", "real", "general"]
        if fields != expected:
            raise DataError(f"unsupported MatrixMarket header: {header.strip()!r}")
        size_line = None
        for line in fh:
            stripped = line.strip()
            if stripped and not stripped.startswith("%"):
                size_line = stripped
                break
        if size_line is None:
            raise DataError("missing size line")
        parts = size_line.split()
        if len(parts) != 3:
            raise DataError(f"bad size line: {size_line!r}")
        try:
            m, n, nnz = (int(p) for p in parts)
        except ValueError as exc:
            raise DataError(f"bad size line: {size_line!r}") from exc
        i = np.empty(nnz, dtype=np.int64)
        j = np.empty(nnz, dtype=np.int64)
        v = np.empty(nnz, dtype=np.float64)
        seen = 0
        for line in fh:
            stripped = line.strip()
            if not stripped or stripped.startswith("%"):
                continue
            if seen >= nnz:
                raise DataError(f"more than {nnz} entries in file")
            parts = stripped.split()
            if len(parts) != 3:
                raise DataError(f"bad entry line: {stripped!r}")
            try:
                i[seen] = int(parts[0]) - 1
                j[seen] = int(parts[1]) - 1
                v[seen] = float(parts[2])
            except ValueError as exc:
                raise DataError(f"bad entry line: {stripped!r}") from exc
            seen += 1
        if seen != nnz:
            raise DataError(f"expected {nnz} entries, found {seen}")
    if nnz and (i.min() < 0 or j.min() < 0):
        raise DataError("indices must be 1-based and positive")
    return SparseMatrix.from_coo(m, n, i, j, v)
