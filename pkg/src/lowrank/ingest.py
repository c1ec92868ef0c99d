"""File ingestion, train/test splitting, and synthetic data generation.

Rating files (comma, tab, or "::" delimited), PPM/PGM images with
channel stacking, and the generators used to build oracle-verified test
problems.  All loaders are deterministic; all samplers are deterministic
under a seed.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataError
from .rng import RngState, gaussian_matrix
from .sparse import ObservationSet, SparseMatrix

_DELIMS = {"csv": ",", "tsv": "\t", "legacy": "::"}


class RatingRecord(NamedTuple):
    user: int
    item: int
    rating: float
    timestamp: Optional[float] = None


@dataclass
class RatingsData:
    """Parsed rating file with contiguous reindexed ids.

    user_ids / item_ids map new indices back to the original file ids
    (sorted ascending).  duplicate_count reports how many (user, item)
    collisions were resolved last-wins.
    """

    obs: ObservationSet
    user_ids: np.ndarray
    item_ids: np.ndarray
    duplicate_count: int


def _is_int(token: str) -> bool:
    try:
        int(token)
    except ValueError:
        return False
    return True


def _parse_rating_line(line: str, delim: str, lineno: int) -> RatingRecord:
    parts = line.split(delim)
    if len(parts) < 3:
        raise DataError(f"line {lineno}: expected at least 3 fields, got {len(parts)}")
    try:
        user = int(parts[0])
        item = int(parts[1])
        rating = float(parts[2])
    except ValueError as exc:
        raise DataError(f"line {lineno}: {exc}") from exc
    ts = None
    if len(parts) > 3 and parts[3].strip():
        try:
            ts = float(parts[3])
        except ValueError as exc:
            raise DataError(f"line {lineno}: bad timestamp {parts[3]!r}") from exc
    if user < 0 or item < 0:
        raise DataError(f"line {lineno}: negative id")
    return RatingRecord(user, item, rating, ts)


def load_ratings(
    path: str, fmt: str = "csv", scale: tuple[float, float] = (0.5, 5.0)
) -> RatingsData:
    """Parse a rating file into an all-train ObservationSet.

    fmt selects the delimiter: "csv" (comma), "tsv" (tab), or "legacy"
    ("::").  A single non-numeric first line is treated as a header and
    skipped; any later unparsable line is an error naming its line
    number.  Ratings outside `scale` are rejected.  Duplicate
    (user, item) pairs resolve last-wins, counted in the result.
    """
    if fmt not in _DELIMS:
        raise ValueError(f"unknown rating format {fmt!r}, expected one of {sorted(_DELIMS)}")
    delim = _DELIMS[fmt]
    records: list[RatingRecord] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                records.append(_parse_rating_line(line, delim, lineno))
            except DataError:
                first = line.split(delim)[0].strip()
                is_header = lineno == 1 and not _is_int(first)
                if not is_header:
                    raise
    if not records:
        raise DataError(f"no rating records in {path}")
    users = np.array([r.user for r in records], dtype=np.int64)
    items = np.array([r.item for r in records], dtype=np.int64)
    vals = np.array([r.rating for r in records])
    lo, hi = scale
    if vals.min() < lo or vals.max() > hi:
        bad = int(np.argmax((vals < lo) | (vals > hi)))
        raise DataError(
            f"rating {vals[bad]} outside scale [{lo}, {hi}] (record {bad + 1})"
        )
    user_ids, u_idx = np.unique(users, return_inverse=True)
    item_ids, i_idx = np.unique(items, return_inverse=True)
    m, n = user_ids.shape[0], item_ids.shape[0]
    # last-wins dedup: sort by (cell, file position), keep each group's tail
    key = u_idx * n + i_idx
    pos = np.arange(key.shape[0])
    order = np.lexsort((pos, key))
    key_sorted = key[order]
    is_last = np.ones(key.shape[0], dtype=bool)
    is_last[:-1] = key_sorted[:-1] != key_sorted[1:]
    keep = order[is_last]
    dup_count = int(key.shape[0] - keep.shape[0])
    obs = ObservationSet(m, n, u_idx[keep], i_idx[keep], vals[keep])
    return RatingsData(obs, user_ids, item_ids, dup_count)


def write_ratings(path: str, obs: ObservationSet, fmt: str = "tsv", one_based: bool = True) -> None:
    """Emit observations as a rating file (all splits, stored order)."""
    if fmt not in _DELIMS:
        raise ValueError(f"unknown rating format {fmt!r}")
    delim = _DELIMS[fmt]
    off = 1 if one_based else 0
    with open(path, "w", encoding="ascii") as fh:
        for r, c, v in zip(obs.rows, obs.cols, obs.values):
            fh.write(f"{r + off}{delim}{c + off}{delim}{v:g}\n")


def split_observations(
    obs: ObservationSet, train_fraction: float, rng: RngState
) -> tuple[ObservationSet, int]:
    """Tag observations train/test by a uniform random split.

    Returns the tagged set plus a cold-start count: rows and columns
    that appear only in the test split, whose entries no completion can
    predict from the training data.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    count = obs.count
    n_train = int(round(train_fraction * count))
    if n_train == 0 or n_train == count:
        raise ValueError(
            f"fraction {train_fraction} yields an empty split on {count} observations"
        )
    perm = rng.permutation(count)
    split = np.ones(count, dtype=np.uint8)  # TEST
    split[perm[:n_train]] = ObservationSet.TRAIN
    tagged = ObservationSet(obs.m, obs.n, obs.rows, obs.cols, obs.values, split)
    train_mask = split == ObservationSet.TRAIN
    cold_rows = np.setdiff1d(obs.rows[~train_mask], obs.rows[train_mask]).shape[0]
    cold_cols = np.setdiff1d(obs.cols[~train_mask], obs.cols[train_mask]).shape[0]
    return tagged, int(cold_rows + cold_cols)


# ------------------------------------------------------------------ images


@dataclass
class ImageMatrix:
    """An image as a channel-stacked real matrix.

    For RGB the stacking order is fixed: R block on top, then G, then B,
    giving a (3*height) x width matrix.  Grayscale stays height x width.
    Values live on the 0..255 scale (fractional values are fine in
    memory; writing rounds).
    """

    width: int
    height: int
    channels: int
    matrix: np.ndarray

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise DataError(f"channels must be 1 or 3, got {self.channels}")
        expected = (self.channels * self.height, self.width)
        if self.matrix.shape != expected:
            raise DataError(f"stacked shape {self.matrix.shape} != {expected}")
        if not np.isfinite(self.matrix).all():
            raise DataError("image values must be finite")
        if self.matrix.min() < 0.0 or self.matrix.max() > 255.0:
            raise DataError("image values must lie in [0, 255]")


def _read_pnm_tokens(buf: bytes, count: int, start: int) -> tuple[list[int], int]:
    # whitespace/comment-tolerant integer scanner for PNM headers and
    # ASCII rasters
    tokens: list[int] = []
    i = start
    n = len(buf)
    while len(tokens) < count and i < n:
        ch = buf[i]
        if ch in b"#":
            while i < n and buf[i] not in b"\r\n":
                i += 1
        elif ch in b" \t\r\n\x0b\x0c":
            i += 1
        else:
            j = i
            while j < n and buf[j] not in b" \t\r\n\x0b\x0c#":
                j += 1
            tok = buf[i:j]
            if not tok.isdigit():
                raise DataError(f"bad token {tok!r} in image header/raster")
            tokens.append(int(tok))
            i = j
    if len(tokens) < count:
        raise DataError("truncated image file")
    return tokens, i


def load_image_stacked(path: str) -> ImageMatrix:
    """Read a PPM (P6/P3) or PGM (P5/P2) file, maxval 255 only.

    RGB channels are stacked vertically (R, G, B) into one real matrix;
    grayscale loads as-is.  Lossless round-trip with
    write_image_stacked for integral values.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 2:
        raise DataError("not a PNM file (too short)")
    magic = buf[:2].decode("ascii", errors="replace")
    if magic not in ("P6", "P3", "P5", "P2"):
        raise DataError(f"unsupported magic {magic!r}, expected P2/P3/P5/P6")
    channels = 3 if magic in ("P6", "P3") else 1
    binary = magic in ("P6", "P5")
    (w, h, maxval), pos = _read_pnm_tokens(buf, 3, 2)
    if maxval != 255:
        raise DataError(f"only maxval 255 supported, got {maxval}")
    if w < 1 or h < 1:
        raise DataError(f"bad image dims {w}x{h}")
    n_vals = w * h * channels
    if binary:
        pos += 1  # single whitespace byte after maxval
        raster = buf[pos : pos + n_vals]
        if len(raster) != n_vals:
            raise DataError(
                f"raster has {len(raster)} bytes, expected {n_vals}"
            )
        flat = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    else:
        vals, _ = _read_pnm_tokens(buf, n_vals, pos)
        flat = np.array(vals, dtype=np.float64)
        if flat.max() > 255 or flat.min() < 0:
            raise DataError("ASCII raster value out of range")
    if channels == 3:
        px = flat.reshape(h, w, 3)
        stacked = np.concatenate([px[:, :, 0], px[:, :, 1], px[:, :, 2]], axis=0)
    else:
        stacked = flat.reshape(h, w)
    return ImageMatrix(w, h, channels, stacked)


def write_image_stacked(path: str, img: ImageMatrix) -> None:
    """Write binary PPM (RGB) or PGM (gray); values round-clip to 0..255."""
    vals = np.clip(np.rint(img.matrix), 0, 255).astype(np.uint8)
    h, w = img.height, img.width
    with open(path, "wb") as fh:
        if img.channels == 3:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            px = np.stack([vals[:h], vals[h : 2 * h], vals[2 * h :]], axis=2)
            fh.write(px.tobytes())
        else:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(vals.tobytes())


def sample_pixels(img: ImageMatrix, fraction: float, rng: RngState) -> ObservationSet:
    """Sample pixel positions; a pixel contributes one entry per channel.

    The mask is drawn once over the height x width grid and applied to
    every stacked channel block, so row i and rows i+h, i+2h share the
    same column pattern.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"pixel fraction must be in (0, 1], got {fraction}")
    h, w, ch = img.height, img.width, img.channels
    total = h * w
    n_pix = total if fraction == 1.0 else int(round(fraction * total))
    n_pix = max(n_pix, 1)
    flat = np.sort(rng.choice_without_replacement(total, n_pix))
    pr, pc = np.divmod(flat, w)
    rows = np.concatenate([pr + t * h for t in range(ch)])
    cols = np.tile(pc, ch)
    vals = img.matrix[rows, cols]
    return ObservationSet(ch * h, w, rows, cols, vals)


# --------------------------------------------------------------- synthesis


@dataclass
class SynthResult:
    matrix: SparseMatrix  # every entry stored (fully dense pattern)
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def synth_low_rank(
    m: int,
    n: int,
    rank: int,
    rng: RngState,
    spectrum: str = "flat",
    alpha: float = 2.0,
    noise: float = 0.0,
    scale: float = 1.0,
) -> SynthResult:
    """Random test matrix with known singular structure.

    A = sum_j sigma_j u_j v_j^T + noise * G, orthonormal random factors,
    sigma flat (all equal to `scale`) or power decay scale * j^{-alpha}.
    Returns the noiseless ground-truth factors alongside the matrix.
    """
    if rank < 1 or rank > min(m, n):
        raise ValueError(f"rank must be in [1, min(m, n)], got {rank}")
    if spectrum not in ("flat", "power"):
        raise ValueError(f"spectrum must be 'flat' or 'power', got {spectrum!r}")
    U, _ = np.linalg.qr(gaussian_matrix(rng, m, rank))
    V, _ = np.linalg.qr(gaussian_matrix(rng, n, rank))
    if spectrum == "flat":
        S = np.full(rank, float(scale))
    else:
        S = scale * np.arange(1, rank + 1, dtype=np.float64) ** (-alpha)
    X = (U * S) @ V.T
    if noise > 0.0:
        X = X + noise * gaussian_matrix(rng, m, n)
    i, j = np.divmod(np.arange(m * n, dtype=np.int64), n)
    return SynthResult(SparseMatrix.from_coo(m, n, i, j, X.ravel()), U, S, V)


def synth_ratings(
    rng: RngState, m: int = 943, n: int = 1682, count: int = 100_000, rank: int = 12
) -> ObservationSet:
    """Synthetic rating data shaped like a small public movie-rating set.

    Draws `count` distinct cells uniformly, with values from a low-rank
    user/item model plus noise, snapped to the half-point grid in
    [0.5, 5.0].  Deterministic under the rng seed.
    """
    if count > m * n:
        raise ValueError(f"cannot place {count} ratings in a {m}x{n} grid")
    flat = rng.choice_without_replacement(m * n, count)
    i, j = np.divmod(np.asarray(flat, dtype=np.int64), n)
    F = gaussian_matrix(rng, m, rank) / np.sqrt(rank)
    G = gaussian_matrix(rng, n, rank)
    base = 3.3 + 1.1 * np.einsum("er,er->e", F[i], G[j])
    base += 0.35 * rng.normal_pairs(count)
    snapped = np.clip(np.rint(base * 2.0) / 2.0, 0.5, 5.0)
    return ObservationSet(m, n, i, j, snapped)


# ------------------------------------------------------------- run summary


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_run_summary(path: str, payload: dict) -> None:
    """JSON run summary: caller's metrics/params/timings plus build id."""
    doc = dict(payload)
    doc.setdefault("build", git_describe())
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
