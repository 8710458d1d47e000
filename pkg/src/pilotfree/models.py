"""Physical models: linear/nonlinear plant dynamics and the fading channel.

Conventions used throughout the package:

* ``CN(0, s2)`` denotes a circularly-symmetric complex Gaussian whose real
  and imaginary parts are independent ``N(0, s2/2)``; :func:`complex_normal`
  implements it.
* The channel is a first-order Gauss-Markov process
  ``h' = alpha*h + sqrt(1 - alpha^2)*v`` with ``v ~ CN(0, sigma_v2)``
  per entry, so for ``|alpha| < 1`` the stationary per-entry variance is
  exactly ``sigma_v2``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


def complex_normal(rng: np.random.Generator, scale2: float, *shape) -> np.ndarray:
    """Draw CN(0, scale2) variates: Re and Im are independent N(0, scale2/2)."""
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return np.sqrt(scale2 / 2.0) * z


def _as_complex_vector(x, n, name) -> np.ndarray:
    x = np.asarray(x, dtype=complex).reshape(-1)
    if x.shape != (n,):
        raise ValueError(f"{name}: expected length {n}, got {x.shape}")
    return x


def controllability_rank(a: np.ndarray, b: np.ndarray) -> int:
    """Rank of the controllability matrix [B, AB, ..., A^(S-1)B]."""
    s = a.shape[0]
    blocks = [b]
    for _ in range(s - 1):
        blocks.append(a @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


@dataclass(frozen=True)
class PlantModel:
    """Linear plant x' = A x + B u_hat + w with quadratic stage cost.

    A is S x S, B is S x N.  W is the process-noise covariance, Q and R the
    state / control cost weights, sigma_x2 the initial-state variance.
    """

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    sigma_x2: float = 1.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "W", np.asarray(self.W, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        s = A.shape[0]
        if A.shape != (s, s):
            raise ValueError("A must be square")
        if B.ndim != 2 or B.shape[0] != s:
            raise ValueError("B must be S x N")
        n = B.shape[1]
        if self.W.shape != (s, s) or self.Q.shape != (s, s):
            raise ValueError("W and Q must be S x S")
        if self.R.shape != (n, n):
            raise ValueError("R must be N x N")
        if self.sigma_x2 < 0:
            raise ValueError("sigma_x2 must be nonnegative")
        if np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T)).min() <= 0:
            raise ValueError("Q must be positive definite")
        if np.linalg.eigvalsh(0.5 * (self.R + self.R.T)).min() <= 0:
            raise ValueError("R must be positive definite")
        if np.linalg.eigvalsh(0.5 * (self.W + self.W.T)).min() < -1e-12:
            raise ValueError("W must be positive semidefinite")
        if controllability_rank(A, B) < s:
            raise ValueError("(A, B) must be controllable")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    def stage_cost(self, x, u) -> float:
        x = np.asarray(x, dtype=complex)
        u = np.asarray(u, dtype=complex)
        return float(np.real(np.conj(x) @ self.Q @ x + np.conj(u) @ self.R @ u))


@dataclass(frozen=True)
class PlantState:
    """Plant state vector; construction rejects NaN/Inf entries."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(x.view(float))):
            raise ValueError("plant state must have finite entries")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class ChannelProcess:
    """Gauss-Markov fading state: parameters plus the current realization.

    For OFDM use n_rx == n_tx == N and ``h`` holds the N diagonal subcarrier
    gains; for MIMO ``h`` is the full n_rx x n_tx matrix.
    """

    alpha: float
    sigma_v2: float
    n_rx: int
    n_tx: int
    h: np.ndarray

    def __post_init__(self):
        if abs(self.alpha) > 1.0:
            raise ValueError("temporal correlation must satisfy |alpha| <= 1")
        if self.sigma_v2 <= 0:
            raise ValueError("sigma_v2 must be positive")
        h = np.asarray(self.h, dtype=complex)
        expect = (self.n_rx,) if self.n_tx == self.n_rx and h.ndim == 1 else (self.n_rx, self.n_tx)
        if h.shape != expect:
            raise ValueError(f"h must have shape {expect}, got {h.shape}")
        object.__setattr__(self, "h", h)

    @classmethod
    def from_innovation_std(cls, alpha, innovation_std, n_rx, n_tx, h=None):
        """Build from the recursion h' = alpha*h + innovation_std*v, v ~ CN(0,1).

        Maps onto the normalized form by sigma_v2 = innovation_std^2/(1-alpha^2),
        so the realized innovation standard deviation equals ``innovation_std``.
        """
        if abs(alpha) >= 1.0:
            raise ValueError("innovation mapping requires |alpha| < 1")
        sigma_v2 = innovation_std**2 / (1.0 - alpha**2)
        if h is None:
            h = np.zeros(n_rx if n_rx == n_tx else (n_rx, n_tx), dtype=complex)
        return cls(alpha, sigma_v2, n_rx, n_tx, h)

    @property
    def innovation_var(self) -> float:
        """Per-entry variance of the realized innovation sqrt(1-alpha^2)*v."""
        return (1.0 - self.alpha**2) * self.sigma_v2

    def sample_innovation(self, rng: np.random.Generator) -> np.ndarray:
        return complex_normal(rng, self.sigma_v2, *self.h.shape)

    def sample_initial(self, rng: np.random.Generator) -> "ChannelProcess":
        """Stationary start: h_0 ~ CN(0, sigma_v2) per entry (CN(0,1) at sigma_v2=1)."""
        h0 = complex_normal(rng, self.sigma_v2, *self.h.shape)
        return replace(self, h=h0)


def step_channel(proc: ChannelProcess, v: np.ndarray) -> ChannelProcess:
    """Advance the Gauss-Markov channel: h' = alpha*h + sqrt(1-alpha^2)*v."""
    v = np.asarray(v, dtype=complex)
    if v.shape != proc.h.shape:
        raise ValueError(f"innovation shape {v.shape} != channel shape {proc.h.shape}")
    h_next = proc.alpha * proc.h + np.sqrt(1.0 - proc.alpha**2) * v
    return replace(proc, h=h_next)


def step_linear_plant(model: PlantModel, state: PlantState, u_hat, w) -> PlantState:
    """One slot of the linear dynamics: x' = A x + B u_hat + w."""
    u_hat = _as_complex_vector(u_hat, model.n_inputs, "u_hat")
    w = _as_complex_vector(w, model.n_states, "w")
    if state.x.shape != (model.n_states,):
        raise ValueError("state dimension does not match model")
    return PlantState(model.A @ state.x + model.B @ u_hat + w)


class Saturation(Enum):
    """Supported elementwise saturations for the nonlinear plant."""

    TANH_SPLIT_REIM = "tanh-split-reim"


def saturate(y, kind: Saturation = Saturation.TANH_SPLIT_REIM) -> np.ndarray:
    """Apply tanh independently to real and imaginary parts.

    Keeps |Re| and |Im| of every component strictly below 1; the analytic
    complex tanh is avoided because of its poles.
    """
    y = np.asarray(y, dtype=complex)
    if kind is not Saturation.TANH_SPLIT_REIM:
        raise ValueError(f"unknown saturation {kind}")
    return np.tanh(y.real) + 1j * np.tanh(y.imag)


@dataclass(frozen=True)
class NonlinearPlantSpec:
    """Linear core plus a saturated actuation path (per-component split tanh)."""

    base: PlantModel
    saturation: Saturation = Saturation.TANH_SPLIT_REIM


def step_nonlinear_plant(spec: NonlinearPlantSpec, state: PlantState, H, u, n_c, w) -> PlantState:
    """x' = A x + B sat(H u) + B sat(n_c) + w with the received signal saturated."""
    model = spec.base
    H = np.asarray(H, dtype=complex)
    u = np.asarray(u, dtype=complex).reshape(-1)
    if H.ndim != 2 or H.shape[1] != u.shape[0]:
        raise ValueError("H and u dimensions are inconsistent")
    if H.shape[0] != model.n_inputs:
        raise ValueError("H output dimension must match B input dimension")
    n_c = _as_complex_vector(n_c, model.n_inputs, "n_c")
    w = _as_complex_vector(w, model.n_states, "w")
    recv = saturate(H @ u, spec.saturation) + saturate(n_c, spec.saturation)
    return PlantState(model.A @ state.x + model.B @ recv + w)


def generic_channel_apply(kind: str, H, u, conjugating=None) -> np.ndarray:
    """Generic channel transforms beyond OFDM.

    ``kind="mimo"`` applies H u.  ``kind="conjugated"`` applies U^-1 H U u for a
    caller-supplied unitary U (covers symplectic/affine transform architectures);
    non-unitary U is rejected.
    """
    H = np.asarray(H, dtype=complex)
    u = np.asarray(u, dtype=complex).reshape(-1)
    if kind == "mimo":
        return H @ u
    if kind == "conjugated":
        if conjugating is None:
            raise ValueError("conjugated kind requires the unitary matrix")
        U = np.asarray(conjugating, dtype=complex)
        n = U.shape[0]
        if U.shape != (n, n):
            raise ValueError("conjugating matrix must be square")
        if np.linalg.norm(np.conj(U.T) @ U - np.eye(n)) > 1e-9:
            raise ValueError("conjugating matrix must be unitary")
        # unitary: inverse equals the conjugate transpose
        return np.conj(U.T) @ (H @ (U @ u))
    raise ValueError(f"unknown channel kind {kind!r}")
