"""EKF/UKF channel predictors for the saturated (nonlinear) plant.

The split tanh is not holomorphic, so complex-linear filtering is invalid;
the channel matrix is widened to the real vector z = [Re vec(H); Im vec(H)]
(row-major vec) of length 2*n_rx*n_tx, and the plant transition becomes a
real observation of length 2*S through

    g(z) = A x_prev + B * sat(mat(z) @ u_prev).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .models import ChannelProcess, PlantModel, saturate
from .predictors import Observation, PredictorState

UKF_ALPHA = 1e-3
UKF_BETA = 2.0
UKF_KAPPA = 0.0


def widen_matrix(H) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    return np.concatenate([H.real.reshape(-1), H.imag.reshape(-1)])


def unwiden_matrix(z, n_rx: int, n_tx: int) -> np.ndarray:
    z = np.asarray(z, dtype=float).reshape(-1)
    d = n_rx * n_tx
    return (z[:d] + 1j * z[d:]).reshape(n_rx, n_tx)


def widen_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=complex).reshape(-1)
    return np.concatenate([x.real, x.imag])


def initial_widened_state(n_rx: int, n_tx: int) -> PredictorState:
    """Widened equivalent of the unit-covariance complex start: 0.5 I per part."""
    d = 2 * n_rx * n_tx
    z = np.zeros(d)
    cov = 0.5 * np.eye(d)
    return PredictorState(z, z.copy(), cov, cov.copy(), slot=1)


def observation_fn(model: PlantModel, obs: Observation, n_rx: int, n_tx: int, z) -> np.ndarray:
    """Widened observation map g(z) = widen(A x_prev + B sat(H(z) u_prev))."""
    H = unwiden_matrix(z, n_rx, n_tx)
    y = model.A @ obs.x_prev + model.B @ saturate(H @ obs.u_prev)
    return widen_vector(y)


def observation_jacobian(model: PlantModel, obs: Observation, n_rx: int, n_tx: int,
                         z) -> np.ndarray:
    """Analytic Jacobian of the widened observation map.

    With y = H u, the split-tanh derivative is diag(1 - tanh^2) applied per
    real/imaginary part, and d(Re y)/d(Re H_mn) = Re u_n etc. follows from the
    row-major vec layout as Kronecker structure.
    """
    H = unwiden_matrix(z, n_rx, n_tx)
    u = obs.u_prev
    y = H @ u
    dr = 1.0 - np.tanh(y.real) ** 2
    di = 1.0 - np.tanh(y.imag) ** 2
    eye = np.eye(n_rx)
    d_re_y_re_h = np.kron(eye, u.real[None, :])    # (n_rx, n_rx*n_tx)
    d_re_y_im_h = np.kron(eye, -u.imag[None, :])
    d_im_y_re_h = np.kron(eye, u.imag[None, :])
    d_im_y_im_h = np.kron(eye, u.real[None, :])
    Bd = model.B
    top = np.hstack([Bd @ (dr[:, None] * d_re_y_re_h), Bd @ (dr[:, None] * d_re_y_im_h)])
    bot = np.hstack([Bd @ (di[:, None] * d_im_y_re_h), Bd @ (di[:, None] * d_im_y_im_h)])
    return np.vstack([top, bot])


def widened_noise_cov(model: PlantModel, sigma_n2: float) -> np.ndarray:
    """Observation-noise covariance in the widened space.

    Approximates sat(n) ~ n for the communication noise, giving the complex
    covariance sigma_n2 B B^T + W, i.e. half of it per real component.
    """
    half = 0.5 * (sigma_n2 * (model.B @ model.B.T) + model.W)
    s = model.n_states
    out = np.zeros((2 * s, 2 * s))
    out[:s, :s] = half
    out[s:, s:] = half
    return out


def widened_process_cov(proc: ChannelProcess, d: int) -> np.ndarray:
    """Innovation covariance per widened component: (1-alpha^2) sigma_v2 / 2."""
    return 0.5 * proc.innovation_var * np.eye(d)


def _time_update(state: PredictorState, proc: ChannelProcess, z_post, cov_post,
                 slot: int) -> PredictorState:
    d = z_post.shape[0]
    z_prior = proc.alpha * z_post
    cov_prior = proc.alpha**2 * cov_post + widened_process_cov(proc, d)
    return PredictorState(z_prior, z_prior.copy(), cov_prior, cov_prior.copy(),
                          slot=slot + 1)


def ekf_step(state: PredictorState, model: PlantModel, proc: ChannelProcess,
             sigma_n2: float, obs: Observation) -> PredictorState:
    """Extended Kalman step on the widened channel state.

    Linearizes the saturated observation at the prior mean; the covariance
    update uses Joseph form.  Includes the time update, so the returned state
    is the one-step-lookahead prior for the next slot.
    """
    z = state.h_prior.real.astype(float)
    Sp = state.sigma_prior.real.astype(float)
    n_rx, n_tx = model.n_inputs, len(obs.u_prev)
    if np.all(obs.u_prev == 0):
        return _time_update(state, proc, z, Sp, state.slot)
    J = observation_jacobian(model, obs, n_rx, n_tx, z)
    Rw = widened_noise_cov(model, sigma_n2)
    innov_cov = J @ Sp @ J.T + Rw
    if np.linalg.cond(innov_cov) > 1e12:
        raise NumericalError("singular innovation covariance in EKF update")
    K = np.linalg.solve(innov_cov.T, J @ Sp.T).T
    resid = widen_vector(obs.x_curr) - observation_fn(model, obs, n_rx, n_tx, z)
    z_post = z + K @ resid
    I_KJ = np.eye(z.shape[0]) - K @ J
    cov_post = I_KJ @ Sp @ I_KJ.T + K @ Rw @ K.T
    cov_post = 0.5 * (cov_post + cov_post.T)
    return _time_update(state, proc, z_post, cov_post, state.slot)


def ukf_weights(n: int, alpha: float = UKF_ALPHA, beta: float = UKF_BETA,
                kappa: float = UKF_KAPPA):
    """Scaled unscented-transform weights; mean weights sum to one."""
    lam = alpha**2 * (n + kappa) - n
    c = 0.5 / (n + lam)
    wm = np.full(2 * n + 1, c)
    wc = np.full(2 * n + 1, c)
    wm[0] = lam / (n + lam)
    wc[0] = lam / (n + lam) + (1.0 - alpha**2 + beta)
    return wm, wc, lam


def _sigma_points(z, cov, lam):
    n = z.shape[0]
    try:
        root = np.linalg.cholesky((n + lam) * cov)
    except np.linalg.LinAlgError:
        # jitter once, then fail loudly
        root = np.linalg.cholesky((n + lam) * (cov + 1e-9 * np.eye(n)))
    pts = np.empty((2 * n + 1, n))
    pts[0] = z
    pts[1:n + 1] = z[None, :] + root.T
    pts[n + 1:] = z[None, :] - root.T
    return pts


def ukf_step(state: PredictorState, model: PlantModel, proc: ChannelProcess,
             sigma_n2: float, obs: Observation,
             observation=None) -> PredictorState:
    """Unscented Kalman step on the widened channel state.

    ``observation`` overrides the default saturated map (used by tests to force
    a linear map, for which the unscented transform is exact).
    """
    z = state.h_prior.real.astype(float)
    Sp = state.sigma_prior.real.astype(float)
    n = z.shape[0]
    n_rx, n_tx = model.n_inputs, len(obs.u_prev)
    if np.all(obs.u_prev == 0):
        return _time_update(state, proc, z, Sp, state.slot)
    if observation is None:
        observation = lambda zz: observation_fn(model, obs, n_rx, n_tx, zz)
    wm, wc, lam = ukf_weights(n)
    pts = _sigma_points(z, Sp, lam)
    ys = np.stack([observation(p) for p in pts])
    y_mean = wm @ ys
    dy = ys - y_mean[None, :]
    dz = pts - z[None, :]
    Rw = widened_noise_cov(model, sigma_n2)
    S_yy = (wc[:, None, None] * (dy[:, :, None] * dy[:, None, :])).sum(axis=0) + Rw
    S_zy = (wc[:, None, None] * (dz[:, :, None] * dy[:, None, :])).sum(axis=0)
    if np.linalg.cond(S_yy) > 1e12:
        raise NumericalError("singular innovation covariance in UKF update")
    K = np.linalg.solve(S_yy.T, S_zy.T).T
    resid = widen_vector(obs.x_curr) - y_mean
    z_post = z + K @ resid
    cov_post = Sp - K @ S_yy @ K.T
    cov_post = 0.5 * (cov_post + cov_post.T)
    return _time_update(state, proc, z_post, cov_post, state.slot)
