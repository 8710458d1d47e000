"""OFDM chain tests: examples, permutation constraints, pipeline equivalence."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pilotfree import (OfdmLink, apply_time_channel, dft_matrix, effective_gains,
                       effective_link, freq_response, ofdm_demodulate,
                       ofdm_modulate, taps_for_subcarrier_gains,
                       validate_permutation)


def make_link(n=4, l_cp=3, taps=None, perm=None):
    taps = np.array([1.0]) if taps is None else np.asarray(taps, dtype=complex)
    perm = tuple(range(n)) if perm is None else tuple(perm)
    return OfdmLink(n, l_cp, len(taps), perm, 0.0, taps)


class TestModulate:
    def test_unit_impulse_is_idft_column(self):
        link = make_link(4, 0)
        out = ofdm_modulate(link, np.array([1.0, 0, 0, 0]))
        np.testing.assert_allclose(out, 0.5 * np.ones(4), atol=1e-12)

    def test_zero_in_zero_out(self):
        link = make_link(4, 2)
        assert np.all(ofdm_modulate(link, np.zeros(4)) == 0)

    def test_cyclic_prefix_copies_tail(self):
        link = make_link(2, 1)
        u = np.array([1.0 + 2.0j, -3.0])
        t = np.fft.ifft(u) * np.sqrt(2)
        out = ofdm_modulate(link, u)
        np.testing.assert_allclose(out, [t[1], t[0], t[1]], atol=1e-12)


class TestTimeChannel:
    def test_unit_tap_passthrough(self):
        link = make_link(4, 2, taps=[1.0])
        s = np.arange(6, dtype=complex)
        np.testing.assert_allclose(apply_time_channel(link, s), s)

    def test_scalar_gain(self):
        link = make_link(4, 2, taps=[0.5])
        s = np.arange(6, dtype=complex)
        np.testing.assert_allclose(apply_time_channel(link, s), 0.5 * s)

    def test_impulse_response(self):
        link = make_link(4, 2, taps=[1.0, 0.5])
        delta = np.zeros(6, dtype=complex)
        delta[0] = 1.0
        expect = np.zeros(6, dtype=complex)
        expect[0], expect[1] = 1.0, 0.5
        np.testing.assert_allclose(apply_time_channel(link, delta), expect)


class TestDemodulate:
    def test_lossless_roundtrip(self):
        link = make_link(4, 2, taps=[1.0])
        rng = np.random.default_rng(0)
        u = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        out = ofdm_demodulate(link, apply_time_channel(link, ofdm_modulate(link, u)))
        np.testing.assert_allclose(out, u, atol=1e-12)

    def test_frequency_response_oracle(self):
        taps = np.array([1.0, 0.5, 0.25])
        link = make_link(4, 2, taps=taps)
        rng = np.random.default_rng(1)
        u = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        out = ofdm_demodulate(link, apply_time_channel(link, ofdm_modulate(link, u)))
        oracle = np.fft.fft(taps, n=4) * u
        np.testing.assert_allclose(out, oracle, atol=1e-10)

    def test_zero_in_zero_out(self):
        link = make_link(4, 2)
        assert np.all(ofdm_demodulate(link, np.zeros(6)) == 0)


class TestEffectiveLink:
    def test_identity(self):
        u = np.array([1.0, 2.0j])
        np.testing.assert_allclose(effective_link(np.eye(2), u, np.zeros(2)), u)

    def test_diagonal_gains(self):
        out = effective_link(np.diag([2.0, 0.0]), np.array([1.0, 1.0]), np.zeros(2))
        np.testing.assert_allclose(out, [2.0, 0.0])

    def test_rejects_non_diagonal(self):
        with pytest.raises(ValueError, match="diagonal"):
            effective_link(np.ones((2, 2)), np.ones(2), np.zeros(2))

    def test_matches_full_chain(self):
        # the permuted diagonal shortcut equals the bit-exact chain
        rng = np.random.default_rng(2)
        taps = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        perm = (2, 0, 3, 1)
        link = make_link(4, 3, taps=taps, perm=perm)
        u = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        chain = ofdm_demodulate(link, apply_time_channel(link, ofdm_modulate(link, u)))
        shortcut = effective_link(np.diag(effective_gains(link)), u, np.zeros(4))
        np.testing.assert_allclose(chain, shortcut, atol=1e-10)


class TestValidatePermutation:
    def test_identity_ok(self):
        assert validate_permutation(np.arange(4)).ok

    def test_duplicate_target_violates_disjointness(self):
        report = validate_permutation(np.array([0, 0, 2, 3]))
        assert not report.ok
        assert "disjoint mapping constraint" in report.violations

    def test_all_ones_matrix_violates_bandwidth(self):
        report = validate_permutation(np.ones((4, 4), dtype=int))
        assert not report.ok
        assert "bandwidth utilization constraint" in report.violations

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_accepts_exactly_the_bijections(self, n):
        # exhaustive over all n^n index maps
        bijections = set(itertools.permutations(range(n)))
        for candidate in itertools.product(range(n), repeat=n):
            report = validate_permutation(np.array(candidate))
            assert report.ok == (candidate in bijections), candidate


class TestUnitaryDft:
    @pytest.mark.parametrize("n", [2, 4, 8, 16])
    def test_unitarity(self, n):
        F = dft_matrix(n)
        assert np.linalg.norm(F @ np.conj(F.T) - np.eye(n)) < 1e-12


class TestPipelineEquivalence:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([2, 4, 8]),
           st.integers(1, 4))
    def test_chain_equals_diagonal_model(self, seed, n, l_h):
        # any taps with l_h <= l_cp + 1, any u, noiseless
        l_cp = max(l_h - 1, 1)
        rng = np.random.default_rng(seed)
        taps = rng.standard_normal(l_h) + 1j * rng.standard_normal(l_h)
        perm = tuple(rng.permutation(n))
        link = OfdmLink(n, l_cp, l_h, perm, 0.0, taps)
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        chain = ofdm_demodulate(link, apply_time_channel(link, ofdm_modulate(link, u)))
        gains = freq_response(link)[np.asarray(perm)]
        np.testing.assert_allclose(chain, gains * u, atol=1e-10)

    def test_taps_from_gains_inverts_response(self):
        rng = np.random.default_rng(9)
        gains = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        taps = taps_for_subcarrier_gains(gains)
        np.testing.assert_allclose(np.fft.fft(taps, 8), gains, atol=1e-12)


class TestLinkInvariants:
    def test_rejects_short_cp(self):
        with pytest.raises(ValueError, match="l_cp"):
            OfdmLink(4, 1, 3, (0, 1, 2, 3), 0.0)

    def test_rejects_non_bijective_perm(self):
        with pytest.raises(ValueError, match="bijection"):
            OfdmLink(4, 3, 1, (0, 0, 2, 3), 0.0)
