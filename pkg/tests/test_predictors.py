"""Channel predictor tests: Kalman ops against closed forms and the
conditional-Gaussian oracle, plus the classical baselines."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pilotfree import (ChannelProcess, Observation, PlantModel,
                       blind_svd_estimate, initial_predictor_state,
                       interpolated_ls, kf_estimate, kf_predict, ls_estimate,
                       nmse, pilot_ls, prediction_error_bound)
from pilotfree.predictors import PredictorState


def scalar_model(a=0.0, b=1.0, w=1.0, q=1.0, r=1.0):
    return PlantModel([[a]], [[b]], [[w]], [[q]], [[r]])


def rand_model(rng, s, n):
    while True:
        a = 0.5 * rng.standard_normal((s, s))
        b = rng.standard_normal((s, n))
        m = rng.standard_normal((s, s))
        try:
            return PlantModel(a, b, m @ m.T / s + 0.1 * np.eye(s),
                              np.eye(s), np.eye(n))
        except ValueError:
            continue


def _rand_psd(rng, n):
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return m @ np.conj(m.T) / n


# --- independent conditional-Gaussian oracle (real-widened block formula) ---

def _widen_cov(sigma):
    """Real covariance of [Re z; Im z] for circular z with complex covariance sigma."""
    return 0.5 * np.block([[sigma.real, -sigma.imag], [sigma.imag, sigma.real]])


def _widen_op(c):
    return np.block([[c.real, -c.imag], [c.imag, c.real]])


def _widen_vec(v):
    return np.concatenate([v.real, v.imag])


def mmse_posterior(model, sigma_n2, obs, h_prior, sigma_prior):
    """Brute-force MMSE via the real block-Gaussian conditioning formula."""
    n = model.n_inputs
    C = model.B * obs.u_prev[None, :]
    Rn = sigma_n2 * (model.B @ model.B.T) + model.W
    Cw = _widen_op(C.astype(complex))
    P = _widen_cov(sigma_prior.astype(complex))
    Rw = _widen_cov(Rn.astype(complex))
    mean_obs = _widen_vec(model.A @ obs.x_prev) + Cw @ _widen_vec(h_prior)
    S = Cw @ P @ Cw.T + Rw
    gain = P @ Cw.T @ np.linalg.inv(S)
    m = _widen_vec(h_prior) + gain @ (_widen_vec(obs.x_curr) - mean_obs)
    cov = P - gain @ Cw @ P
    h_post = m[:n] + 1j * m[n:]
    rr, ri = cov[:n, :n], cov[:n, n:]
    ir, ii = cov[n:, :n], cov[n:, n:]
    sigma_post = (rr + ii) + 1j * (ir - ri)
    return h_post, sigma_post


class TestKfEstimate:
    def test_zero_control_gives_no_update(self):
        model = scalar_model()
        state = initial_predictor_state(1)
        obs = Observation([1.0], [2.0], [0.0])
        out = kf_estimate(state, model, 0.1, obs)
        np.testing.assert_array_equal(out.h_post, state.h_prior)
        np.testing.assert_array_equal(out.sigma_post, state.sigma_prior)

    def test_noiseless_perfect_observation(self):
        # S=N=1, A=0, B=1, W=0, sigma_n2=0: K=1 and the posterior equals x_curr
        model = PlantModel([[0.0]], [[1.0]], [[0.0]], [[1.0]], [[1.0]])
        state = initial_predictor_state(1)
        obs = Observation([0.0], [0.7 - 0.2j], [1.0])
        out = kf_estimate(state, model, 0.0, obs)
        np.testing.assert_allclose(out.h_post, [0.7 - 0.2j], atol=1e-12)
        np.testing.assert_allclose(out.sigma_post, [[0.0]], atol=1e-12)

    def test_scalar_closed_form(self):
        # Sigma=1, u=1, B=1, W + sigma_n2 B B^T = 1, A=0: K=0.5, Sigma_post=0.5
        model = scalar_model(a=0.0, b=1.0, w=1.0)
        state = initial_predictor_state(1)
        obs = Observation([0.0], [1.0], [1.0])
        out = kf_estimate(state, model, 0.0, obs)
        np.testing.assert_allclose(out.h_post, [0.5], atol=1e-12)
        np.testing.assert_allclose(out.sigma_post, [[0.5]], atol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_conditional_gaussian_oracle(self, seed):
        rng = np.random.default_rng(seed)
        s, n = rng.integers(1, 5), rng.integers(1, 5)
        model = rand_model(rng, s, n)
        sigma_prior = _rand_psd(rng, n) + 0.2 * np.eye(n)
        h_prior = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        state = PredictorState(h_prior, h_prior, sigma_prior, sigma_prior)
        obs = Observation(rng.standard_normal(s) + 1j * rng.standard_normal(s),
                          rng.standard_normal(s) + 1j * rng.standard_normal(s),
                          rng.standard_normal(n) + 1j * rng.standard_normal(n))
        sigma_n2 = float(rng.uniform(0.01, 1.0))
        out = kf_estimate(state, model, sigma_n2, obs)
        h_ref, sigma_ref = mmse_posterior(model, sigma_n2, obs, h_prior, sigma_prior)
        np.testing.assert_allclose(out.h_post, h_ref, atol=1e-8)
        np.testing.assert_allclose(out.sigma_post, sigma_ref, atol=1e-8)

    def test_singular_innovation_covariance_raises(self):
        from pilotfree.errors import NumericalError
        model = PlantModel(0.5 * np.eye(2), np.eye(2), np.zeros((2, 2)),
                           np.eye(2), np.eye(2))
        state = initial_predictor_state(2)
        # one dead control port, no noise: the innovation covariance is rank 1
        obs = Observation(np.zeros(2), np.ones(2), [1.0, 0.0])
        with pytest.raises(NumericalError, match="innovation"):
            kf_estimate(state, model, 0.0, obs)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_joseph_form_stays_psd_and_monotone(self, seed):
        rng = np.random.default_rng(seed)
        model = rand_model(rng, 3, 3)
        sigma_prior = _rand_psd(rng, 3) + 1e-3 * np.eye(3)
        h_prior = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        state = PredictorState(h_prior, h_prior, sigma_prior, sigma_prior)
        obs = Observation(rng.standard_normal(3), rng.standard_normal(3),
                          rng.standard_normal(3) + 1j * rng.standard_normal(3))
        out = kf_estimate(state, model, 0.1, obs)
        assert np.linalg.eigvalsh(out.sigma_post).min() >= -1e-9
        # information never hurts: posterior below prior in the Loewner order
        assert np.linalg.eigvalsh(out.sigma_prior - out.sigma_post).min() >= -1e-9


class TestKfPredict:
    def test_unit_alpha_keeps_posterior(self):
        proc = ChannelProcess(1.0, 1.0, 2, 2, np.zeros(2))
        state = PredictorState([1.0, 2.0j], [1.0, 2.0j], np.eye(2), 0.5 * np.eye(2))
        out = kf_predict(state, proc)
        np.testing.assert_allclose(out.h_prior, [1.0, 2.0j])
        np.testing.assert_allclose(out.sigma_prior, 0.5 * np.eye(2))

    def test_zero_alpha_is_memoryless(self):
        proc = ChannelProcess(0.0, 2.0, 2, 2, np.zeros(2))
        state = PredictorState([1.0, 1.0], [1.0, 1.0], np.eye(2), np.eye(2))
        out = kf_predict(state, proc)
        np.testing.assert_allclose(out.h_prior, np.zeros(2))
        np.testing.assert_allclose(out.sigma_prior, 2.0 * np.eye(2))

    def test_experiment_parameters(self):
        proc = ChannelProcess.from_innovation_std(0.95, 0.3, 4, 4)
        state = PredictorState(np.zeros(4), np.zeros(4), np.eye(4), np.zeros((4, 4)))
        out = kf_predict(state, proc)
        np.testing.assert_allclose(out.sigma_prior, 0.09 * np.eye(4), atol=1e-14)


class TestPredictionErrorBound:
    def test_memoryless(self):
        assert prediction_error_bound(ChannelProcess(0.0, 1.0, 4, 4, np.zeros(4)),
                                      4) == 4.0

    def test_unit_alpha_indicator(self):
        assert prediction_error_bound(ChannelProcess(1.0, 1.0, 4, 4, np.zeros(4)),
                                      4) == 4.0

    def test_experiment_value(self):
        proc = ChannelProcess.from_innovation_std(0.95, 0.3, 4, 4)
        assert prediction_error_bound(proc, 4) == pytest.approx(37.8698, abs=1e-3)


class TestNmse:
    def test_perfect(self):
        assert nmse([np.ones(3)], [np.ones(3)]) == 0.0

    def test_zero_prediction(self):
        assert nmse([np.zeros(3)], [np.ones(3)]) == 1.0

    def test_double_prediction(self):
        truths = [np.array([1.0, 2.0j])]
        assert nmse([2.0 * truths[0]], truths) == pytest.approx(1.0)

    def test_zero_power_rejected(self):
        with pytest.raises(ValueError):
            nmse([np.ones(2)], [np.zeros(2)])


class TestLsEstimate:
    def test_noiseless_scalar_recovery(self):
        model = scalar_model(a=0.3, b=2.0)
        h = 0.8 - 0.1j
        u = 1.5 + 0.5j
        x_prev = np.array([1.0 + 1.0j])
        x_curr = model.A @ x_prev + model.B @ np.array([u * h])
        est, mask = ls_estimate(model, Observation(x_prev, x_curr, [u]))
        assert mask.all()
        np.testing.assert_allclose(est, [h], atol=1e-12)

    def test_zero_entry_flagged_and_carried(self):
        model = PlantModel(0.1 * np.eye(2), np.eye(2), np.eye(2), np.eye(2),
                           np.eye(2))
        prev = np.array([9.0, 9.0j])
        obs = Observation(np.zeros(2), np.ones(2), [1.0, 0.0])
        est, mask = ls_estimate(model, obs, prev_estimate=prev)
        assert mask.tolist() == [True, False]
        assert est[1] == prev[1]

    def test_all_zero_control_returns_previous(self):
        model = scalar_model()
        prev = np.array([3.0 + 1j])
        est, mask = ls_estimate(model, Observation([0.0], [1.0], [0.0]), prev)
        assert not mask.any()
        assert est[0] == prev[0]

    def test_error_variance_oracle(self):
        # error variance (sigma_n2 B^2 + W) / (B^2 |u|^2) over 1e4 transitions
        rng = np.random.default_rng(42)
        b, w, sigma_n2, u = 2.0, 0.5, 0.3, 1.5
        model = scalar_model(a=0.0, b=b, w=w)
        h = 0.7 + 0.2j
        errs = []
        for _ in range(10_000):
            noise = (b * np.sqrt(sigma_n2 / 2) * (rng.standard_normal()
                                                  + 1j * rng.standard_normal())
                     + np.sqrt(w / 2) * (rng.standard_normal()
                                         + 1j * rng.standard_normal()))
            x_curr = np.array([b * u * h + noise])
            est, _ = ls_estimate(model, Observation([0.0], x_curr, [u]))
            errs.append(abs(est[0] - h) ** 2)
        expect = (sigma_n2 * b**2 + w) / (b**2 * abs(u) ** 2)
        assert np.mean(errs) == pytest.approx(expect, rel=0.1)


class TestBlindSvd:
    def test_zero_window(self):
        model = scalar_model()
        assert np.all(blind_svd_estimate(model, [np.zeros(1)] * 10) == 0)

    def test_rank_one_window_recovers_direction(self):
        rng = np.random.default_rng(1)
        model = rand_model(rng, 4, 4)
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        v /= np.linalg.norm(v)
        states = [c * v for c in rng.standard_normal(10) + 1]
        est = blind_svd_estimate(model, states, window=10)
        # alignment of the dominant right singular vector against B's columns
        align = (np.conj(model.B.T) @ v) / np.sum(model.B**2, axis=0)
        got = est / np.linalg.norm(est)
        want = align / np.linalg.norm(align)
        assert abs(np.abs(np.vdot(got, want)) - 1.0) < 1e-9


class TestInterpolatedLs:
    def _transitions(self, model, h_of_k, u, n):
        obs = []
        x = np.zeros(1, dtype=complex)
        for k in range(n):
            x_next = model.A @ x + model.B @ np.array([u * h_of_k(k)])
            obs.append(Observation(x, x_next, [u]))
            x = x_next
        return obs

    def test_constant_channel_exact(self):
        model = scalar_model(a=0.2, b=1.0)
        obs = self._transitions(model, lambda k: 0.5 + 0.5j, 1.0, 6)
        preds = interpolated_ls(model, obs)
        for p in preds:
            np.testing.assert_allclose(p, [0.5 + 0.5j], atol=1e-12)

    def test_affine_drift_midpoint_exact(self):
        # linear-in-time channel: averaging adjacent even estimates is exact
        model = scalar_model(a=0.0, b=1.0)
        obs = self._transitions(model, lambda k: 1.0 + 0.1 * (k + 1), 1.0, 7)
        preds = interpolated_ls(model, obs)
        for odd in (1, 3):
            np.testing.assert_allclose(preds[odd], [1.0 + 0.1 * (odd + 1)],
                                       atol=1e-12)

    def test_trailing_slot_holds_last_estimate(self):
        model = scalar_model(a=0.0, b=1.0)
        obs = self._transitions(model, lambda k: 1.0 + 0.1 * (k + 1), 1.0, 6)
        preds = interpolated_ls(model, obs)
        np.testing.assert_allclose(preds[5], preds[4], atol=1e-12)


class TestPilotLs:
    def test_noiseless_exact_recovery(self):
        rng = np.random.default_rng(3)
        H = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        X = np.linalg.qr(rng.standard_normal((3, 3)))[0]
        est, power = pilot_ls(X, H @ X)
        np.testing.assert_allclose(est, H, atol=1e-10)

    def test_unitary_pilot_power(self):
        X = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))[0]
        _, power = pilot_ls(X, np.zeros((3, 3)))
        assert power == pytest.approx(3.0, abs=1e-12)

    def test_cumulative_power_after_100_slots(self):
        # 100 unitary 3x3 pilots: 10 log10(300) ~ 24.8 dB
        total = 100 * 3.0
        assert 10 * np.log10(total) == pytest.approx(24.8, abs=0.05)

    def test_rejects_non_unitary_pilot(self):
        with pytest.raises(ValueError, match="unitary"):
            pilot_ls(2.0 * np.eye(2), np.zeros((2, 2)))
