"""Deterministic random streams for sketching and sampling.

Gaussian matrices are produced by a Box-Muller transform applied to a
Philox counter-based uniform stream.  Philox generates each block of
uniforms from (key, counter) alone, so the sequence for a given seed is
bit-reproducible regardless of how work is tiled, and two streams with
different seeds never interleave.
"""

from __future__ import annotations

import numpy as np


class RngState:
    """A seeded random stream with an explicit draw position.

    Parameters
    ----------
    seed : int
        64-bit stream key.  Identical seeds yield bit-identical draw
        sequences for identical call sequences.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        self.position = 0  # uniforms consumed so far

    def __repr__(self):
        return f"RngState(seed={self.seed}, position={self.position})"

    def uniform(self, count: int) -> np.ndarray:
        """Draw `count` uniforms in [0, 1)."""
        self.position += count
        return self._gen.random(count)

    def normal_pairs(self, count: int) -> np.ndarray:
        """Draw `count` standard normals via Box-Muller.

        Consumes uniforms in pairs: z0 = sqrt(-2 ln u1) cos(2 pi u2),
        z1 = sqrt(-2 ln u1) sin(2 pi u2), with u1 shifted into (0, 1]
        so the log never sees zero.  An odd `count` still consumes a
        full final pair.
        """
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[:pairs]  # (0, 1]
        u2 = u[pairs:]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:count]

    def integers(self, low: int, high: int, count: int) -> np.ndarray:
        """Draw `count` integers uniform on [low, high)."""
        self.position += count
        return self._gen.integers(low, high, size=count)

    def permutation(self, n: int) -> np.ndarray:
        """A uniform random permutation of range(n)."""
        self.position += n
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """Sample k distinct indices from range(n)."""
        self.position += k
        return self._gen.choice(n, size=k, replace=False, shuffle=False)

    def spawn(self, tag: int) -> "RngState":
        """Derive an independent stream keyed off (seed, tag)."""
        return RngState((self.seed * 0x9E3779B97F4A7C15 + tag + 1) % (1 << 63))


def gaussian_matrix(rng: RngState, rows: int, cols: int) -> np.ndarray:
    """An i.i.d. standard-normal matrix, filled column by column.

    Parameters
    ----------
    rng : RngState
        Stream to consume; advances by the draws used.
    rows, cols : int
        Output shape; both must be >= 1.

    Returns
    -------
    ndarray of shape (rows, cols), float64.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"gaussian matrix needs rows, cols >= 1, got {rows}x{cols}")
    z = rng.normal_pairs(rows * cols)
    return np.ascontiguousarray(z.reshape((rows, cols), order="F"))
