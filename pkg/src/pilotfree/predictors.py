"""Control-aided channel prediction: Kalman predictor and classical baselines.

The hidden state is the vector of subcarrier gains; the observation is the
plant transition itself,

    x_k = A x_{k-1} + B U_{k-1} h_k + (B n_{k-1} + w_{k-1}),

with U = Diag(u).  Control commands double as excitation, so no pilots are
needed: the filter extracts channel information from how the plant moved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .models import ChannelProcess, PlantModel

LS_EXCITATION_THRESHOLD = 1e-8   # |u_i| below this is treated as zero excitation


@dataclass(frozen=True)
class PredictorState:
    """Prior/posterior channel estimates with their error covariances.

    ``h_prior``/``sigma_prior`` refer to slot ``slot`` given slot-1 information
    (the one-step-lookahead pair); ``h_post``/``sigma_post`` to the filtered
    estimate.  EKF/UKF reuse the same container with real (widened) vectors.
    """

    h_prior: np.ndarray
    h_post: np.ndarray
    sigma_prior: np.ndarray
    sigma_post: np.ndarray
    slot: int = 1

    def __post_init__(self):
        for name in ("h_prior", "h_post"):
            v = np.asarray(getattr(self, name)).reshape(-1)
            object.__setattr__(self, name, v)
        for name in ("sigma_prior", "sigma_post"):
            m = np.asarray(getattr(self, name))
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.abs(m - np.conj(m.T)).max() > 1e-8:
                raise ValueError(f"{name} must be Hermitian")
            object.__setattr__(self, name, m)
        if self.slot < 0:
            raise ValueError("slot must be nonnegative")


@dataclass(frozen=True)
class Observation:
    """One plant transition (x_prev -> x_curr) under the applied control u_prev."""

    x_prev: np.ndarray
    x_curr: np.ndarray
    u_prev: np.ndarray

    def __post_init__(self):
        for name in ("x_prev", "x_curr", "u_prev"):
            v = np.asarray(getattr(self, name), dtype=complex).reshape(-1)
            if not np.all(np.isfinite(v.view(float))):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)


def initial_predictor_state(n: int) -> PredictorState:
    """hhat(1|0) = 0 with unit prior covariance."""
    z = np.zeros(n, dtype=complex)
    eye = np.eye(n, dtype=complex)
    return PredictorState(z, z.copy(), eye, eye.copy(), slot=1)


def kf_estimate(state: PredictorState, model: PlantModel, sigma_n2: float,
                obs: Observation) -> PredictorState:
    """Measurement update: fuse one plant transition into the channel belief.

    Uses C = B Diag(u_prev) as the observation matrix and
    Rn = sigma_n2 B B^T + W as the observation-noise covariance; the posterior
    covariance is propagated in Joseph form to preserve positive
    semidefiniteness.  Raises NumericalError when the innovation covariance is
    numerically singular (condition number above 1e12); callers may add jitter
    and retry.
    """
    n = model.n_inputs
    if state.h_prior.shape != (n,):
        raise ValueError("predictor state dimension mismatch")
    u = obs.u_prev
    if u.shape != (n,):
        raise ValueError("control dimension mismatch")
    if np.all(u == 0):
        # No excitation: the transition carries no channel information.
        return PredictorState(state.h_prior, state.h_prior.copy(),
                              state.sigma_prior, state.sigma_prior.copy(),
                              slot=state.slot)
    C = model.B * u[None, :]
    Rn = sigma_n2 * (model.B @ model.B.T) + model.W
    Sp = state.sigma_prior
    innov_cov = C @ Sp @ np.conj(C.T) + Rn
    if np.linalg.cond(innov_cov) > 1e12:
        raise NumericalError("singular innovation covariance in channel update")
    # K = Sp C^H innov_cov^{-1} == (innov_cov^{-1} C Sp^H)^H for Hermitian innov_cov
    K = np.conj(np.linalg.solve(innov_cov, C @ np.conj(Sp.T)).T)
    innovation = obs.x_curr - model.A @ obs.x_prev - C @ state.h_prior
    h_post = state.h_prior + K @ innovation
    I_KC = np.eye(n) - K @ C
    sigma_post = I_KC @ Sp @ np.conj(I_KC.T) + K @ Rn @ np.conj(K.T)
    sigma_post = 0.5 * (sigma_post + np.conj(sigma_post.T))
    return PredictorState(state.h_prior, h_post, Sp, sigma_post, slot=state.slot)


def kf_predict(state: PredictorState, proc: ChannelProcess) -> PredictorState:
    """Time update through the channel dynamics: shrink by alpha, add innovation."""
    n = state.h_post.shape[0]
    v_cov = proc.innovation_var * np.eye(n)
    h_prior = proc.alpha * state.h_post
    sigma_prior = proc.alpha**2 * state.sigma_post + v_cov
    return PredictorState(h_prior, h_prior.copy(), sigma_prior, sigma_prior.copy(),
                          slot=state.slot + 1)


def prediction_error_bound(proc: ChannelProcess, n: int) -> float:
    """Analytic ceiling on the time-averaged prior error trace.

    Equals sigma_v2 * n / (1 - alpha^2) for |alpha| < 1 and n at |alpha| = 1.
    """
    if abs(proc.alpha) >= 1.0:
        return float(n)
    return proc.sigma_v2 * n / (1.0 - proc.alpha**2)


def nmse(predictions, truths) -> float:
    """Normalized MSE: sum ||Hhat - H||_F^2 / sum ||H||_F^2 over the sequence."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise ValueError("sequences must have equal length")
    err = 0.0
    power = 0.0
    for p, t in zip(predictions, truths):
        p = np.asarray(p, dtype=complex)
        t = np.asarray(t, dtype=complex)
        err += float(np.sum(np.abs(p - t) ** 2))
        power += float(np.sum(np.abs(t) ** 2))
    if power == 0.0:
        raise ValueError("truth sequence has zero power")
    return err / power


# ---------------------------------------------------------------------------
# Baseline 1: per-slot least squares
# ---------------------------------------------------------------------------

def ls_estimate(model: PlantModel, obs: Observation, prev_estimate=None,
                threshold: float = LS_EXCITATION_THRESHOLD):
    """Least-squares channel estimate from a single plant transition.

    Inverts x_curr - A x_prev = B Diag(u) h on the excited components; entries
    with |u_i| below the threshold are unidentifiable and carry forward the
    previous estimate (zero when there is none).  Returns (h_hat, identifiable)
    where ``identifiable`` is the boolean excitation mask.
    """
    n = model.n_inputs
    u = obs.u_prev
    if prev_estimate is None:
        prev_estimate = np.zeros(n, dtype=complex)
    h_hat = np.asarray(prev_estimate, dtype=complex).reshape(-1).copy()
    mask = np.abs(u) > threshold
    if mask.any():
        C = (model.B * u[None, :])[:, mask]
        rhs = obs.x_curr - model.A @ obs.x_prev
        h_hat[mask] = np.linalg.pinv(C) @ rhs
    return h_hat, mask


class LsPredictor:
    """Stateful wrapper: per-slot LS estimate, prediction by continuity."""

    def __init__(self, model: PlantModel, threshold: float = LS_EXCITATION_THRESHOLD):
        self.model = model
        self.threshold = threshold
        self.h_hat = np.zeros(model.n_inputs, dtype=complex)

    def update(self, obs: Observation) -> np.ndarray:
        self.h_hat, _ = ls_estimate(self.model, obs, self.h_hat, self.threshold)
        return self.h_hat

    def predict(self) -> np.ndarray:
        return self.h_hat.copy()


# ---------------------------------------------------------------------------
# Baseline 2: blind SVD on a state window
# ---------------------------------------------------------------------------

def blind_svd_estimate(model: PlantModel, states, window: int = 10) -> np.ndarray:
    """Blind rank-1 channel proxy from recent states only.

    Stacks the last ``window`` states into a w x S matrix, takes the dominant
    right singular pair (s1, v1), and aligns v1 against each actuation column:
    h_i = (s1 / sqrt(w)) * <B[:, i], v1> / ||B[:, i]||^2.  Degenerate windows
    (all states ~ 0) yield the zero prediction.
    """
    states = [np.asarray(s, dtype=complex).reshape(-1) for s in states]
    if len(states) < window:
        window = len(states)
    if window < 1:
        return np.zeros(model.n_inputs, dtype=complex)
    X = np.stack(states[-window:])
    if np.linalg.norm(X) < 1e-12:
        return np.zeros(model.n_inputs, dtype=complex)
    _, svals, vh = np.linalg.svd(X, full_matrices=False)
    v1 = vh[0]          # dominant direction of the stacked state rows
    s1 = svals[0]
    cols = model.B.astype(complex)
    align = (np.conj(cols.T) @ v1) / np.sum(np.abs(cols) ** 2, axis=0)
    return (s1 / np.sqrt(window)) * align


class BlindSvdPredictor:
    """Windowed blind-SVD baseline; prediction by continuity."""

    def __init__(self, model: PlantModel, window: int = 10):
        self.model = model
        self.window = window
        self.states: list = []
        self.h_hat = np.zeros(model.n_inputs, dtype=complex)

    def update(self, obs: Observation) -> np.ndarray:
        if not self.states:
            self.states.append(obs.x_prev)
        self.states.append(obs.x_curr)
        self.states = self.states[-self.window:]
        self.h_hat = blind_svd_estimate(self.model, self.states, self.window)
        return self.h_hat

    def predict(self) -> np.ndarray:
        return self.h_hat.copy()


# ---------------------------------------------------------------------------
# Baseline 3: LS every two slots with temporal averaging
# ---------------------------------------------------------------------------

def interpolated_ls(model: PlantModel, observations,
                    threshold: float = LS_EXCITATION_THRESHOLD) -> list:
    """Series form of the every-other-slot LS baseline.

    LS estimates are computed on even-indexed observations only.  Predictions
    on even slots use the fresh estimate; odd-slot predictions average the two
    adjacent even-slot estimates, falling back to the last available estimate
    at the trailing edge.
    """
    observations = list(observations)
    n = len(observations)
    estimates: dict = {}
    prev = np.zeros(model.n_inputs, dtype=complex)
    for k in range(0, n, 2):
        prev, _ = ls_estimate(model, observations[k], prev, threshold)
        estimates[k] = prev.copy()
    out = []
    for k in range(n):
        if k in estimates:
            out.append(estimates[k])
        else:
            left = estimates.get(k - 1)
            right = estimates.get(k + 1)
            if right is None:
                out.append(left.copy())
            else:
                out.append(0.5 * (left + right))
    return out


class InterpolatedLsPredictor:
    """Causal variant used in closed loop: refresh on even slots, then average
    the last two estimates; between refreshes the newest estimate is held."""

    def __init__(self, model: PlantModel, threshold: float = LS_EXCITATION_THRESHOLD):
        self.model = model
        self.threshold = threshold
        self.slot = 0
        self.last = np.zeros(model.n_inputs, dtype=complex)
        self.prev = None

    def update(self, obs: Observation) -> np.ndarray:
        if self.slot % 2 == 0:
            est, _ = ls_estimate(self.model, obs, self.last, self.threshold)
            self.prev = self.last
            self.last = est
        self.slot += 1
        return self.last

    def predict(self) -> np.ndarray:
        if self.slot % 2 == 0 or self.prev is None:
            return self.last.copy()
        return 0.5 * (self.last + self.prev)


# ---------------------------------------------------------------------------
# Baseline 4: pilot-aided least squares
# ---------------------------------------------------------------------------

def pilot_ls(pilot, received, sigma_n2: float = 0.0):
    """LS channel recovery from a known unitary pilot block.

    ``received`` is Y = H X + N for pilot matrix X; since X is unitary the LS
    inverse is Y X^H.  Returns (H_hat, pilot_power) where pilot_power is the
    Frobenius transmit power of the pilot block, logged for overhead accounting.
    """
    X = np.asarray(pilot, dtype=complex)
    n = X.shape[0]
    if X.shape != (n, n) or np.linalg.norm(np.conj(X.T) @ X - np.eye(n)) > 1e-9:
        raise ValueError("pilot matrix must be square unitary")
    Y = np.asarray(received, dtype=complex)
    H_hat = Y @ np.conj(X.T)
    power = float(np.sum(np.abs(X) ** 2))
    return H_hat, power


class PilotLsPredictor:
    """Pilot-aided baseline: observes the slot channel through a unitary pilot.

    Accumulates transmitted pilot power so the harness can report overhead.
    """

    def __init__(self, n_rx: int, n_tx: int, pilot=None):
        self.n_rx = n_rx
        self.n_tx = n_tx
        self.pilot = np.eye(n_tx, dtype=complex) if pilot is None else np.asarray(pilot, complex)
        if np.linalg.norm(np.conj(self.pilot.T) @ self.pilot - np.eye(n_tx)) > 1e-9:
            raise ValueError("pilot matrix must be unitary")
        self.h_hat = np.zeros((n_rx, n_tx), dtype=complex)
        self.cumulative_power = 0.0

    def observe(self, H_true, noise) -> np.ndarray:
        """Pilot shot through the true channel: Y = H X + noise."""
        Y = np.asarray(H_true, dtype=complex) @ self.pilot + np.asarray(noise, dtype=complex)
        self.h_hat, power = pilot_ls(self.pilot, Y)
        self.cumulative_power += power
        return self.h_hat

    def predict(self) -> np.ndarray:
        return self.h_hat.copy()
