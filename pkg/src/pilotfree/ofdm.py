"""Bit-exact OFDM transmit/receive chain and its diagonal equivalent.

The chain is: subcarrier mapping (permutation P), unitary inverse DFT,
cyclic-prefix insertion, block-local convolution with the multipath taps,
CP removal, unitary DFT, inverse mapping.  With ``l_cp >= l_h - 1`` the
whole chain collapses to independent per-subcarrier complex gains given by
the N-point DFT of the zero-padded taps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix F with F[m, k] = exp(-2j pi m k / n) / sqrt(n)."""
    m = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(m, m) / n) / np.sqrt(n)


@dataclass(frozen=True)
class PermutationReport:
    ok: bool
    violations: tuple = ()


def validate_permutation(perm) -> PermutationReport:
    """Check a subcarrier assignment, given as an index map or a 0/1 matrix.

    A map ``perm[i] = j`` sends control component i to subcarrier j; the
    equivalent binary matrix is P[j, i] = 1.  The report names every violated
    constraint (bandwidth utilization, disjoint mapping, bijective mapping);
    a valid assignment is exactly a bijection of {0..N-1}.
    """
    arr = np.asarray(perm)
    if arr.ndim == 1:
        n = arr.shape[0]
        mat = np.zeros((n, n), dtype=int)
        for i, j in enumerate(arr):
            j = int(j)
            if not 0 <= j < n:
                return PermutationReport(False, ("bijective mapping constraint",))
            mat[j, i] += 1
    elif arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        mat = arr.astype(int)
    else:
        return PermutationReport(False, ("bijective mapping constraint",))

    n = mat.shape[0]
    violations = []
    if np.count_nonzero(mat) != n:
        violations.append("bandwidth utilization constraint")
    cols = mat.sum(axis=0)
    rows = mat.sum(axis=1)
    gram = mat.T @ mat
    if np.any(gram - np.diag(np.diag(gram)) != 0):
        violations.append("disjoint mapping constraint")
    if np.any(cols != 1) or np.any(rows != 1):
        violations.append("bijective mapping constraint")
    return PermutationReport(not violations, tuple(violations))


def _default_taps(l_h: int) -> np.ndarray:
    taps = np.zeros(l_h, dtype=complex)
    taps[0] = 1.0
    return taps


@dataclass(frozen=True)
class OfdmLink:
    """OFDM link parameters plus the current tap-domain impulse response.

    ``perm[i]`` is the subcarrier carrying control component i.  The CP must
    cover the channel memory (``l_cp >= l_h - 1``), otherwise the circular-
    convolution equivalence underlying the diagonal model breaks.
    """

    n_sub: int
    l_cp: int
    l_h: int
    perm: tuple
    sigma_n2: float
    taps: np.ndarray = None

    def __post_init__(self):
        if self.n_sub < 1 or self.l_h < 1 or self.l_cp < 0:
            raise ValueError("n_sub and l_h must be positive, l_cp nonnegative")
        if self.l_cp < self.l_h - 1:
            raise ValueError("need l_cp >= l_h - 1 for circular-convolution equivalence")
        if self.sigma_n2 < 0:
            raise ValueError("sigma_n2 must be nonnegative")
        perm = tuple(int(p) for p in self.perm)
        report = validate_permutation(np.asarray(perm))
        if len(perm) != self.n_sub or not report.ok:
            raise ValueError(f"perm must be a bijection of 0..{self.n_sub - 1}: "
                             f"{report.violations}")
        object.__setattr__(self, "perm", perm)
        taps = self.taps if self.taps is not None else _default_taps(self.l_h)
        taps = np.asarray(taps, dtype=complex).reshape(-1)
        if taps.shape != (self.l_h,):
            raise ValueError(f"taps must have length l_h={self.l_h}")
        object.__setattr__(self, "taps", taps)

    def with_taps(self, taps) -> "OfdmLink":
        return replace(self, taps=np.asarray(taps, dtype=complex))

    @property
    def inverse_perm(self) -> np.ndarray:
        inv = np.empty(self.n_sub, dtype=int)
        inv[np.asarray(self.perm)] = np.arange(self.n_sub)
        return inv


def subcarrier_map(link: OfdmLink, u) -> np.ndarray:
    """s_f = P u: place component i on subcarrier perm[i]."""
    u = np.asarray(u, dtype=complex).reshape(-1)
    s_f = np.zeros(link.n_sub, dtype=complex)
    s_f[np.asarray(link.perm)] = u
    return s_f


def ofdm_modulate(link: OfdmLink, u) -> np.ndarray:
    """Map to subcarriers, inverse-DFT, and prepend the cyclic prefix."""
    u = np.asarray(u, dtype=complex).reshape(-1)
    if u.shape != (link.n_sub,):
        raise ValueError("control vector length must equal n_sub")
    s_f = subcarrier_map(link, u)
    s_t = np.fft.ifft(s_f) * np.sqrt(link.n_sub)   # unitary F^H
    if link.l_cp == 0:
        return s_t
    # periodic extension; reduces to copying the last l_cp samples when l_cp <= N
    prefix = s_t[np.arange(-link.l_cp, 0) % link.n_sub]
    return np.concatenate([prefix, s_t])


def apply_time_channel(link: OfdmLink, s_cp, n_t=None) -> np.ndarray:
    """Block-local Toeplitz convolution with the taps, plus additive noise.

    Memory before the block is zero: each OFDM block sees a fresh convolution.
    """
    s_cp = np.asarray(s_cp, dtype=complex).reshape(-1)
    m = link.n_sub + link.l_cp
    if s_cp.shape != (m,):
        raise ValueError(f"expected block of length {m}")
    out = np.convolve(s_cp, link.taps)[:m]
    if n_t is not None:
        n_t = np.asarray(n_t, dtype=complex).reshape(-1)
        if n_t.shape != (m,):
            raise ValueError("noise block length mismatch")
        out = out + n_t
    return out


def ofdm_demodulate(link: OfdmLink, r) -> np.ndarray:
    """Drop the CP, apply the unitary DFT, undo the subcarrier mapping."""
    r = np.asarray(r, dtype=complex).reshape(-1)
    if r.shape != (link.n_sub + link.l_cp,):
        raise ValueError("received block length mismatch")
    body = r[link.l_cp:]
    s_f = np.fft.fft(body) / np.sqrt(link.n_sub)   # unitary F
    return s_f[np.asarray(link.perm)]              # u_hat = P^T s_f


def freq_response(link: OfdmLink) -> np.ndarray:
    """Per-subcarrier complex gains: N-point DFT of the (zero-padded) taps.

    Taps longer than the block fold modulo N first, matching the circular
    convolution the cyclic prefix induces.
    """
    n = link.n_sub
    taps = link.taps
    if taps.shape[0] > n:
        pad = (-taps.shape[0]) % n
        taps = np.concatenate([taps, np.zeros(pad, dtype=complex)])
        taps = taps.reshape(-1, n).sum(axis=0)
    return np.fft.fft(taps, n=n)


def effective_gains(link: OfdmLink) -> np.ndarray:
    """Diagonal gains seen at the control ports: freq response reordered by P^T."""
    return freq_response(link)[np.asarray(link.perm)]


def taps_for_subcarrier_gains(gains) -> np.ndarray:
    """Tap-domain impulse response realizing the given per-subcarrier gains.

    The result has N taps, so it needs l_cp >= N - 1 to keep the chain exact.
    """
    gains = np.asarray(gains, dtype=complex).reshape(-1)
    return np.fft.ifft(gains)


def effective_link(H_diag, u, n) -> np.ndarray:
    """Model-level shortcut u_hat = H u + n; H must be diagonal."""
    H = np.asarray(H_diag, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be a square matrix")
    if np.any(H - np.diag(np.diag(H)) != 0):
        raise ValueError("H must be diagonal")
    u = np.asarray(u, dtype=complex).reshape(-1)
    n = np.asarray(n, dtype=complex).reshape(-1)
    if u.shape[0] != H.shape[0] or n.shape[0] != H.shape[0]:
        raise ValueError("dimension mismatch")
    return np.diag(H) * u + n
