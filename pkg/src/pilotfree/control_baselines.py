"""Channel-agnostic control baselines: PID and a fixed nominal-design LQR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import PlantModel
from .riccati import dare_gain, solve_dare


@dataclass(frozen=True)
class PidGains:
    """Fixed tuning used for all experiments; the integral clamp bounds windup."""

    kp: float = 0.8
    ki: float = 0.05
    kd: float = 0.1
    integral_clamp: float = 50.0


class PidController:
    """PID on the plant state, mapped to the control ports by a pseudoinverse.

    u = -B_eff^+ (kp x + ki sum(x) + kd (x - x_prev)); the integral term is
    clamped per component (magnitude) to ``integral_clamp``.  ``output_map``
    defaults to B itself; pass B @ H_nominal when control and receive
    dimensions differ.
    """

    def __init__(self, model: PlantModel, gains: PidGains = PidGains(), output_map=None):
        self.model = model
        self.gains = gains
        out = model.B if output_map is None else np.asarray(output_map)
        self._pinv = np.linalg.pinv(out)
        self.reset()

    def reset(self):
        self.integral = np.zeros(self.model.n_states, dtype=complex)
        self.x_prev = None

    def step(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex).reshape(-1)
        self.integral = self.integral + x
        mag = np.abs(self.integral)
        over = mag > self.gains.integral_clamp
        if over.any():
            self.integral[over] *= self.gains.integral_clamp / mag[over]
        deriv = np.zeros_like(x) if self.x_prev is None else x - self.x_prev
        self.x_prev = x
        g = self.gains
        return -self._pinv @ (g.kp * x + g.ki * self.integral + g.kd * deriv)


def nominal_lqr(model: PlantModel, h_nominal=None, r=None, tol: float = 1e-10):
    """Fixed LQR gain designed for a nominal channel, ignoring fading at run time.

    Solves the DARE for (A, B H_nominal, Q, R) by iteration and returns
    (gain, kernel).  The default nominal channel is the identity-shaped matrix
    (the unfaded link); ``r`` overrides the control weight when the control
    dimension differs from B's column count (the MIMO case).  Raises
    NumericalError when the nominal pair is not stabilizable (for instance
    H_nominal = 0 with an unstable plant).
    """
    if h_nominal is None:
        h_nominal = np.eye(model.n_inputs)
    h_nominal = np.asarray(h_nominal)
    b_eff = model.B @ h_nominal
    r = model.R if r is None else np.asarray(r)
    if b_eff.shape[1] != r.shape[0]:
        raise ValueError("control weight dimension must match the nominal input")
    p = solve_dare(model.A, b_eff, model.Q, r, tol=tol)
    return dare_gain(model.A, b_eff, model.Q, r, p), p
