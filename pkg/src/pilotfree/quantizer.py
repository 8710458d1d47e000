"""Statistical quantization of predicted channel vectors.

Each complex entry is quantized by magnitude (m_r uniform bins over
[0, radius]) and phase (m_theta uniform sectors over [-pi, pi)), plus one
overflow cell per entry for magnitudes at or beyond the radius.  The joint
index over the N entries is mixed-radix little-endian, so every complex
N-vector maps to exactly one index in {0, ..., n_bins-1}.

Cell edges are half-open [lo, hi) in both coordinates for determinism; the
phase of zero is taken as 0.  The default radius 3 covers more than 99.7%
of the mass of a unit-variance circular Gaussian entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuantGrid:
    m_r: int
    m_theta: int
    n_sub: int
    radius: float = 3.0

    def __post_init__(self):
        if self.m_r < 1 or self.m_theta < 1 or self.n_sub < 1:
            raise ValueError("m_r, m_theta and n_sub must be positive")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def cells_per_entry(self) -> int:
        return self.m_r * self.m_theta + 1

    @property
    def overflow_code(self) -> int:
        return self.m_r * self.m_theta

    @property
    def n_bins(self) -> int:
        return self.cells_per_entry ** self.n_sub


def quantize_entry(grid: QuantGrid, z: complex) -> int:
    """Per-entry cell code: radial-major regular cells, then the overflow cell."""
    m = abs(z)
    if m >= grid.radius:
        return grid.overflow_code
    r = min(int(m * grid.m_r / grid.radius), grid.m_r - 1)
    # np.angle in (-pi, pi]; fold the +pi edge onto -pi via the modulo.
    # Zero has phase 0 by convention (guards against signed-zero components).
    theta = np.angle(z) if m > 0.0 else 0.0
    s = int((theta + np.pi) * grid.m_theta / (2.0 * np.pi)) % grid.m_theta
    return r * grid.m_theta + s


def quantize(grid: QuantGrid, h_hat) -> int:
    """Joint bin index of a complex N-vector (mixed-radix, entry 0 least significant)."""
    h_hat = np.asarray(h_hat, dtype=complex).reshape(-1)
    if h_hat.shape != (grid.n_sub,):
        raise ValueError(f"expected vector of length {grid.n_sub}")
    idx = 0
    for i in range(grid.n_sub - 1, -1, -1):
        idx = idx * grid.cells_per_entry + quantize_entry(grid, h_hat[i])
    return idx


def representative_entry(grid: QuantGrid, code: int) -> complex:
    """Cell representative: mid-radius and mid-angle; overflow clips to the radius.

    The overflow cell is a single phase-less region per entry, so its
    representative takes phase 0 by convention.
    """
    if not 0 <= code <= grid.overflow_code:
        raise ValueError("invalid per-entry cell code")
    if code == grid.overflow_code:
        return complex(grid.radius, 0.0)
    r, s = divmod(code, grid.m_theta)
    mag = (r + 0.5) * grid.radius / grid.m_r
    ang = -np.pi + (s + 0.5) * 2.0 * np.pi / grid.m_theta
    return mag * np.exp(1j * ang)


def representative(grid: QuantGrid, index: int) -> np.ndarray:
    """Representative channel vector of a joint bin index."""
    if not 0 <= index < grid.n_bins:
        raise ValueError("joint bin index out of range")
    out = np.empty(grid.n_sub, dtype=complex)
    for i in range(grid.n_sub):
        index, code = divmod(index, grid.cells_per_entry)
        out[i] = representative_entry(grid, code)
    return out


@lru_cache(maxsize=8)
def all_representatives(grid: QuantGrid) -> np.ndarray:
    """(n_bins, n_sub) array of every bin representative (cached per grid)."""
    reps = np.empty((grid.n_bins, grid.n_sub), dtype=complex)
    per_entry = np.array([representative_entry(grid, c)
                          for c in range(grid.cells_per_entry)])
    idx = np.arange(grid.n_bins)
    for i in range(grid.n_sub):
        idx, codes = np.divmod(idx, grid.cells_per_entry)
        reps[:, i] = per_entry[codes]
    reps.setflags(write=False)
    return reps


@lru_cache(maxsize=8)
def successor_map(grid: QuantGrid, alpha: float) -> np.ndarray:
    """Bin index of alpha * representative, for every bin (cached per grid/alpha)."""
    reps = all_representatives(grid)
    succ = np.fromiter((quantize(grid, alpha * reps[l]) for l in range(grid.n_bins)),
                       dtype=np.int64, count=grid.n_bins)
    succ.setflags(write=False)
    return succ


def quantize_batch(grid: QuantGrid, vectors: np.ndarray) -> np.ndarray:
    """Vectorized joint indices for an (m, n_sub) array of channel vectors."""
    vectors = np.asarray(vectors, dtype=complex)
    mags = np.abs(vectors)
    r = np.minimum((mags * grid.m_r / grid.radius).astype(np.int64), grid.m_r - 1)
    theta = np.where(mags > 0.0, np.angle(vectors), 0.0)
    s = ((theta + np.pi) * grid.m_theta / (2.0 * np.pi)).astype(np.int64) % grid.m_theta
    codes = np.where(mags >= grid.radius, grid.overflow_code, r * grid.m_theta + s)
    weights = grid.cells_per_entry ** np.arange(grid.n_sub, dtype=np.int64)
    return codes @ weights
