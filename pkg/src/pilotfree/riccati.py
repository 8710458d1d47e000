"""Quantized coupled-Riccati controller: offline solvers, online updates, gains.

The kernel table assigns one Hermitian PSD matrix per quantizer bin; the
fixed-point equation couples bin l to its successor l' (the bin containing
alpha times l's representative),

    P_l = Q + A^T P_l' A
          - A^T P_l' B H_l (H_l^H B^T P_l' B H_l + R + tr(B^T P_l' B Sb) I)^-1
            H_l^H B^T P_l' A,

where H_l = Diag of the bin representative and Sb is the uniform prior-error
bound.  Two independent offline routes are provided (value iteration and
policy iteration) plus the online stochastic-approximation update that learns
the table one visited bin at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CareDivergenceError, NumericalError
from .models import ChannelProcess, PlantModel
from .quantizer import QuantGrid, all_representatives, quantize, successor_map
from .predictors import prediction_error_bound

SERIALIZATION_VERSION = 1


def default_sigma_bar(proc: ChannelProcess, n: int) -> np.ndarray:
    """Uniform prior-error bound: (analytic trace ceiling / n) times identity."""
    return (prediction_error_bound(proc, n) / n) * np.eye(n)


def hermitize(P: np.ndarray) -> np.ndarray:
    """Symmetrize to suppress femto-scale drift that compounds in long runs."""
    if P.ndim == 2:
        return 0.5 * (P + np.conj(P.T))
    return 0.5 * (P + np.conj(np.transpose(P, (0, 2, 1))))


@dataclass
class KernelTable:
    """Per-bin Riccati kernels plus the grid/channel context that indexes them.

    ``kernels`` has shape (n_bins, S, S); ``successors[l]`` is the bin of
    alpha times l's representative.  Mutated in place only by the online
    update; trials that run in parallel must own their own copy.
    """

    grid: QuantGrid
    alpha: float
    sigma_bar: np.ndarray
    kernels: np.ndarray
    successors: np.ndarray = field(default=None)

    def __post_init__(self):
        self.sigma_bar = np.asarray(self.sigma_bar, dtype=complex)
        n = self.grid.n_sub
        if self.sigma_bar.shape != (n, n):
            raise ValueError("sigma_bar must be n_sub x n_sub")
        self.kernels = np.asarray(self.kernels, dtype=complex)
        if self.kernels.ndim != 3 or self.kernels.shape[0] != self.grid.n_bins:
            raise ValueError("kernels must have shape (n_bins, S, S)")
        if self.successors is None:
            self.successors = successor_map(self.grid, self.alpha)
        self.successors = np.asarray(self.successors, dtype=np.int64)

    @classmethod
    def initialized(cls, grid: QuantGrid, alpha: float, sigma_bar, model: PlantModel):
        """All kernels start at Q (PSD, and the backward-recursion terminal value)."""
        kernels = np.broadcast_to(model.Q.astype(complex),
                                  (grid.n_bins, model.n_states, model.n_states)).copy()
        return cls(grid, alpha, sigma_bar, kernels)

    def copy(self) -> "KernelTable":
        return KernelTable(self.grid, self.alpha, self.sigma_bar.copy(),
                           self.kernels.copy(), self.successors.copy())

    def representative(self, index: int) -> np.ndarray:
        return all_representatives(self.grid)[index]


def care_riccati_rhs(model: PlantModel, h_rep, p_next, sigma_bar) -> np.ndarray:
    """One coupled-Riccati evaluation for a single bin.

    ``h_rep`` is the bin representative (diagonal of H_l), ``p_next`` the
    successor kernel.  The inner matrix is Hermitian positive definite because
    R is and the additions are PSD.  The result is Hermitian-symmetrized.
    """
    A, B, Q, R = model.A, model.B, model.Q, model.R
    h_rep = np.asarray(h_rep, dtype=complex).reshape(-1)
    p_next = np.asarray(p_next, dtype=complex)
    sigma_bar = np.asarray(sigma_bar, dtype=complex)
    pnb = p_next @ B
    btpb = B.T @ pnb
    m = (np.conj(h_rep)[:, None] * btpb * h_rep[None, :] + R
         + np.real(np.trace(btpb @ sigma_bar)) * np.eye(model.n_inputs))
    g = (A.T @ pnb) * h_rep[None, :]          # A^T P' B H
    x = np.linalg.solve(m, np.conj(g.T))
    return hermitize(Q + A.T @ p_next @ A - g @ x)


def _rhs_batch(model: PlantModel, reps, p_stack, next_idx, sigma_bar):
    """Vectorized Riccati right-hand side over all bins."""
    A, B, Q, R = model.A, model.B, model.Q, model.R
    n = model.n_inputs
    pn = p_stack[next_idx]
    pnb = pn @ B
    btpb = B.T @ pnb
    tr = np.einsum('lnm,mn->l', btpb, sigma_bar).real
    m = (np.conj(reps)[:, :, None] * btpb * reps[:, None, :] + R
         + tr[:, None, None] * np.eye(n))
    g = (A.T @ pnb) * reps[:, None, :]
    x = np.linalg.solve(m, np.conj(np.transpose(g, (0, 2, 1))))
    return hermitize(Q + A.T @ pn @ A - g @ x)


def care_value_iteration(model: PlantModel, grid: QuantGrid, alpha: float,
                         sigma_bar, tol: float = 1e-9, max_iter: int = 10_000):
    """Solve the coupled Riccati equations by simultaneous fixed-point iteration.

    Starts every kernel at Q and iterates until the largest per-bin Frobenius
    change drops below ``tol``.  Returns (table, iterations).  Raises
    CareDivergenceError (carrying the residual trajectory) if the budget is
    exhausted or the iteration blows up, which happens when the uncertainty
    regularization exceeds the plant's stabilizability threshold.
    """
    sigma_bar = np.asarray(sigma_bar, dtype=complex)
    reps = all_representatives(grid)
    succ = successor_map(grid, alpha)
    p = np.broadcast_to(model.Q.astype(complex),
                        (grid.n_bins, model.n_states, model.n_states)).copy()
    residuals = []
    for it in range(max_iter):
        p_new = _rhs_batch(model, reps, p, succ, sigma_bar)
        resid = float(np.sqrt(np.sum(np.abs(p_new - p) ** 2, axis=(1, 2))).max())
        residuals.append(resid)
        p = p_new
        if resid < tol:
            table = KernelTable(grid, alpha, sigma_bar, p, succ.copy())
            return table, it + 1
        if not np.isfinite(resid) or resid > 1e14:
            raise CareDivergenceError(
                f"value iteration diverged after {it + 1} iterations", residuals)
    raise CareDivergenceError(
        f"value iteration did not reach tol={tol} in {max_iter} iterations "
        f"(last residual {residuals[-1]:.3e})", residuals)


def _gains_batch(model: PlantModel, reps, p_stack, next_idx, sigma_bar):
    A, B = model.A, model.B
    n = model.n_inputs
    pn = p_stack[next_idx]
    pnb = pn @ B
    btpb = B.T @ pnb
    tr = np.einsum('lnm,mn->l', btpb, sigma_bar).real
    m = (np.conj(reps)[:, :, None] * btpb * reps[:, None, :] + model.R
         + tr[:, None, None] * np.eye(n))
    g = np.conj(np.transpose((A.T @ pnb) * reps[:, None, :], (0, 2, 1)))
    return -np.linalg.solve(m, g)


def control_gain(table: KernelTable, model: PlantModel, index: int,
                 lookahead: bool = True, sigma_bar_scale: float = 1.0) -> np.ndarray:
    """Feedback gain for one bin: u = K x.

    ``lookahead=True`` indexes the kernel at the successor bin (the form the
    average-cost derivation produces); ``lookahead=False`` uses the active
    bin's own kernel (the literal online-update pairing).  ``sigma_bar_scale``
    inflates the uncertainty regularizer inside the gain only.
    """
    h_rep = table.representative(index)
    target = int(table.successors[index]) if lookahead else int(index)
    p = table.kernels[target]
    B = model.B
    pnb = p @ B
    btpb = B.T @ pnb
    sb = sigma_bar_scale * table.sigma_bar
    m = (np.conj(h_rep)[:, None] * btpb * h_rep[None, :] + model.R
         + np.real(np.trace(btpb @ sb)) * np.eye(model.n_inputs))
    g = np.conj(((model.A.T @ pnb) * h_rep[None, :]).T)
    return -np.linalg.solve(m, g)


def control_input(table: KernelTable, model: PlantModel, h_hat, x,
                  lookahead: bool = True, sigma_bar_scale: float = 1.0) -> np.ndarray:
    """Quantize the prediction, look up the gain, and close the loop."""
    index = quantize(table.grid, h_hat)
    K = control_gain(table, model, index, lookahead, sigma_bar_scale)
    return K @ np.asarray(x, dtype=complex).reshape(-1)


def all_control_gains(table: KernelTable, model: PlantModel, lookahead: bool = True,
                      sigma_bar_scale: float = 1.0) -> np.ndarray:
    """(n_bins, N, S) stack of feedback gains, for hot loops."""
    reps = all_representatives(table.grid)
    next_idx = table.successors if lookahead else np.arange(table.grid.n_bins)
    return _gains_batch(model, reps, table.kernels, next_idx,
                        sigma_bar_scale * np.asarray(table.sigma_bar))


def closed_loop_matrices(table: KernelTable, model: PlantModel,
                         gains=None, reps=None) -> np.ndarray:
    reps = all_representatives(table.grid) if reps is None else reps
    if gains is None:
        gains = all_control_gains(table, model)
    bh = model.B[None, :, :] * reps[:, None, :]
    return model.A + bh @ gains


def stabilizing_check(table: KernelTable, model: PlantModel, gains=None,
                      reps=None, margin: float = 1e-8):
    """Spectral radius of every bin's closed loop; flags radii at or above 1.

    Returns (radii, flagged_indices).  ``reps`` may override the bin
    representatives (useful for audits of hypothetical channel points).
    """
    cl = closed_loop_matrices(table, model, gains, reps)
    radii = np.abs(np.linalg.eigvals(cl)).max(axis=1)
    flagged = np.nonzero(radii >= 1.0 - margin)[0]
    return radii, flagged


def bellman_bias(table: KernelTable, model: PlantModel, index: int,
                 sigma_n2: float, W=None) -> float:
    """Per-stage average-cost bias: tr(sigma_n2 B^T P_l' B + P_l' W)."""
    W = model.W if W is None else np.asarray(W)
    p = table.kernels[int(table.successors[index])]
    val = sigma_n2 * np.trace(model.B.T @ p @ model.B) + np.trace(p @ W)
    return float(np.real(val))


@dataclass(frozen=True)
class StepSchedule:
    """Harmonic step sizes mu_k = c / (k + 1); square-summable but not summable."""

    c: float = 1.0
    rule: str = "harmonic"

    def __post_init__(self):
        if self.rule != "harmonic":
            raise ValueError("only the harmonic rule is supported")
        if self.c <= 0:
            raise ValueError("c must be positive")

    def step(self, k: int) -> float:
        return self.c / (k + 1.0)


def sa_kernel_update(table: KernelTable, active_index: int, model: PlantModel,
                     mu: float) -> KernelTable:
    """One stochastic-approximation step on the active bin's kernel.

    Moves P_l toward the Riccati right-hand side evaluated at the successor's
    current kernel; every other bin is left untouched.  Mutates the table in
    place and returns it.
    """
    l = int(active_index)
    lp = int(table.successors[l])
    reps = all_representatives(table.grid)
    target = care_riccati_rhs(model, reps[l], table.kernels[lp], table.sigma_bar)
    table.kernels[l] = hermitize(table.kernels[l] + mu * (target - table.kernels[l]))
    return table


# ---------------------------------------------------------------------------
# Policy iteration (evaluation / improvement alternation)
# ---------------------------------------------------------------------------

def decoupled_stabilizing_gains(model: PlantModel, grid: QuantGrid, sigma_bar,
                                tol: float = 1e-8, max_iter: int = 10_000):
    """Per-bin stabilizing initial gains for policy iteration.

    Solves, for every bin separately, the Riccati equation with the bin as its
    own successor (including the uncertainty trace term).  Each pair
    (A, B H_l) is stabilizable whenever the representative has no zero entry,
    so these single-mode solutions exist and their gains render every closed
    loop Schur; the trace-aware regularization keeps the coupled policy
    evaluation contractive, which trace-blind gains do not guarantee.
    """
    sigma_bar = np.asarray(sigma_bar, dtype=complex)
    reps = all_representatives(grid)
    own = np.arange(grid.n_bins)
    p = np.broadcast_to(model.Q.astype(complex),
                        (grid.n_bins, model.n_states, model.n_states)).copy()
    residuals = []
    for it in range(max_iter):
        p_new = _rhs_batch(model, reps, p, own, sigma_bar)
        resid = float(np.abs(p_new - p).max())
        residuals.append(resid)
        p = p_new
        if resid < tol:
            break
        if not np.isfinite(resid) or resid > 1e14:
            raise CareDivergenceError("decoupled init diverged", residuals)
    else:
        raise CareDivergenceError("decoupled init did not converge", residuals)
    return _gains_batch(model, reps, p, own, sigma_bar)


def policy_evaluation(model: PlantModel, grid: QuantGrid, alpha: float, sigma_bar,
                      gains, p_init=None, tol: float = 1e-10,
                      max_iter: int = 50_000) -> np.ndarray:
    """Coupled-Lyapunov cost of a fixed per-bin policy, by fixed-point iteration.

    Iterates P_l <- Q + K_l^H R_eff(P_l') K_l + (A + B H_l K_l)^H P_l' (A + B H_l K_l)
    with R_eff(P) = R + tr(B^T P B Sb) I until the sup change is below ``tol``.
    """
    sigma_bar = np.asarray(sigma_bar, dtype=complex)
    reps = all_representatives(grid)
    succ = successor_map(grid, alpha)
    B = model.B
    bh = B[None, :, :] * reps[:, None, :]
    acl = model.A + bh @ gains
    acl_h = np.conj(np.transpose(acl, (0, 2, 1)))
    k_h = np.conj(np.transpose(gains, (0, 2, 1)))
    khk = k_h @ gains
    base = model.Q + k_h @ model.R @ gains
    if p_init is None:
        p_init = np.broadcast_to(model.Q.astype(complex),
                                 (grid.n_bins, model.n_states, model.n_states))
    p = np.array(p_init, dtype=complex)
    for it in range(max_iter):
        pn = p[succ]
        tr = np.einsum('lnm,mn->l', B.T @ pn @ B, sigma_bar).real
        p_new = hermitize(base + tr[:, None, None] * khk + acl_h @ pn @ acl)
        resid = float(np.abs(p_new - p).max())
        p = p_new
        if resid < tol:
            return p
        if not np.isfinite(resid) or resid > 1e14:
            raise NumericalError("policy evaluation diverged; initial policy is "
                                 "too aggressive for the uncertainty level")
    raise NumericalError(f"policy evaluation did not converge (residual {resid:.3e})")


def care_policy_iteration(model: PlantModel, grid: QuantGrid, alpha: float,
                          sigma_bar, gains_init=None, gain_tol: float = 1e-9,
                          eval_tol: float = 1e-10, max_sweeps: int = 200,
                          monotone_tol: float = 1e-9):
    """Solve the coupled Riccati equations by policy evaluation / improvement.

    ``gains_init`` must make every bin's closed loop Schur (verified before the
    first evaluation); by default the trace-aware per-bin construction is used.
    The per-sweep monotone decrease of the kernel stack is asserted, mirroring
    how the improvement step is justified.  Returns (table, sweeps).
    """
    sigma_bar = np.asarray(sigma_bar, dtype=complex)
    reps = all_representatives(grid)
    succ = successor_map(grid, alpha)
    if gains_init is None:
        gains = decoupled_stabilizing_gains(model, grid, sigma_bar)
    else:
        gains = np.asarray(gains_init, dtype=complex)
        if gains.ndim == 2:
            gains = np.broadcast_to(gains, (grid.n_bins,) + gains.shape).copy()
    bh = model.B[None, :, :] * reps[:, None, :]
    radii = np.abs(np.linalg.eigvals(model.A + bh @ gains)).max(axis=1)
    if radii.max() >= 1.0:
        raise NumericalError(
            f"initial policy is not stabilizing (max spectral radius {radii.max():.4f})")
    p = policy_evaluation(model, grid, alpha, sigma_bar, gains, tol=eval_tol)
    for sweep in range(max_sweeps):
        gains_new = _gains_batch(model, reps, p, succ, sigma_bar)
        delta = float(np.abs(gains_new - gains).max())
        gains = gains_new
        p_new = policy_evaluation(model, grid, alpha, sigma_bar, gains, p_init=p,
                                  tol=eval_tol)
        drop = np.linalg.eigvalsh(p - p_new).min()
        if drop < -monotone_tol:
            raise NumericalError(
                f"policy iteration lost monotonicity (min eig {drop:.3e})")
        p = p_new
        if delta < gain_tol:
            return KernelTable(grid, alpha, sigma_bar, p, succ.copy()), sweep + 1
    raise NumericalError("policy iteration did not converge")


# ---------------------------------------------------------------------------
# Finite-horizon backward recursion (verification oracle) and the classic DARE
# ---------------------------------------------------------------------------

def finite_horizon_kernel(model: PlantModel, h_path, sigma_path, terminal=None) -> list:
    """Backward value recursion over a known prediction/covariance path.

    ``h_path[k]`` is the slot-k channel prediction (diagonal entries) and
    ``sigma_path[k]`` its error covariance; the terminal kernel defaults to Q.
    Returns [P_0, ..., P_K] with P_K the terminal kernel.  For a frozen
    channel the leading kernel approaches the coupled-Riccati fixed point as
    the horizon grows.
    """
    h_path = [np.asarray(h, dtype=complex).reshape(-1) for h in h_path]
    sigma_path = [np.asarray(s, dtype=complex) for s in sigma_path]
    if len(h_path) != len(sigma_path):
        raise ValueError("h_path and sigma_path must have equal length")
    p = model.Q.astype(complex) if terminal is None else np.asarray(terminal, complex)
    kernels = [p]
    for h, sig in zip(reversed(h_path), reversed(sigma_path)):
        p = care_riccati_rhs(model, h, p, sig)
        kernels.append(p)
    kernels.reverse()
    return kernels


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Textbook discrete algebraic Riccati fixed point, by iteration from Q.

    Raises NumericalError if the iteration diverges (non-stabilizable pair) or
    stalls.  Accepts complex B (the faded-input case).
    """
    A = np.asarray(A)
    B = np.asarray(B)
    Q = np.asarray(Q)
    R = np.asarray(R)
    p = Q.astype(complex)
    for _ in range(max_iter):
        btp = np.conj(B.T) @ p
        m = btp @ B + R
        k = np.linalg.solve(m, btp @ A)
        p_new = hermitize(Q + np.conj(A.T) @ p @ A - np.conj(A.T) @ p @ B @ k)
        resid = float(np.abs(p_new - p).max())
        p = p_new
        if resid < tol:
            return p
        if not np.isfinite(resid) or np.abs(p).max() > 1e14:
            raise NumericalError("DARE iteration diverged: pair is not stabilizable")
    raise NumericalError(f"DARE iteration did not converge (residual {resid:.3e})")


def dare_gain(A, B, Q, R, p=None) -> np.ndarray:
    """Optimal feedback u = K x for the classic DARE: K = -(R + B^H P B)^-1 B^H P A."""
    if p is None:
        p = solve_dare(A, B, Q, R)
    B = np.asarray(B)
    btp = np.conj(B.T) @ p
    return -np.linalg.solve(btp @ B + np.asarray(R), btp @ np.asarray(A))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_kernel_table(table: KernelTable, path) -> None:
    """Self-describing dump: version tag, grid parameters, sigma_bar, kernels."""
    np.savez(path,
             version=np.int64(SERIALIZATION_VERSION),
             m_r=np.int64(table.grid.m_r),
             m_theta=np.int64(table.grid.m_theta),
             n_sub=np.int64(table.grid.n_sub),
             radius=float(table.grid.radius),
             alpha=float(table.alpha),
             sigma_bar=table.sigma_bar,
             kernels=table.kernels,
             successors=table.successors)


def load_kernel_table(path, expected_grid: QuantGrid = None) -> KernelTable:
    """Load a dump, rejecting version or grid-parameter mismatches."""
    with np.load(path) as data:
        version = int(data["version"])
        if version != SERIALIZATION_VERSION:
            raise ValueError(f"unsupported kernel-table version {version}")
        grid = QuantGrid(int(data["m_r"]), int(data["m_theta"]), int(data["n_sub"]),
                         float(data["radius"]))
        if expected_grid is not None and grid != expected_grid:
            raise ValueError(f"kernel table grid {grid} does not match expected "
                             f"{expected_grid}")
        return KernelTable(grid, float(data["alpha"]), data["sigma_bar"],
                           data["kernels"], data["successors"])
