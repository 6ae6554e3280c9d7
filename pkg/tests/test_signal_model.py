import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmimo.eadf import PatternGrid, build_eadf
from dmimo.mathcore import SeededStream
from dmimo.signal_model import (
    LosParams,
    SignalSpec,
    UeAntenna,
    build_b_matrix,
    effective_bandwidth,
    free_space_gain,
    los_signal,
    synthesize_received,
    tilt_rotate,
)

from conftest import random_link, random_model, random_spec, random_ue


def isotropic_model():
    return build_eadf(PatternGrid(np.ones((1, 2, 4, 4), dtype=complex)))


class TestTiltRotate:
    def test_identity_at_zero(self):
        ue = UeAntenna(c_tv=0.7 + 0.1j, c_th=-0.2j, beta=0.0)
        assert tilt_rotate(ue) == (ue.c_tv, ue.c_th)

    def test_quarter_turn(self):
        ue = UeAntenna(c_tv=1.0, c_th=0.0, beta=np.pi / 2)
        cv, ch = tilt_rotate(ue)
        assert cv == pytest.approx(0.0, abs=1e-15)
        assert ch == pytest.approx(1.0)

    def test_forty_five_degrees(self):
        ue = UeAntenna(c_tv=1.0, c_th=0.0, beta=np.deg2rad(45))
        cv, ch = tilt_rotate(ue)
        assert cv == pytest.approx(np.cos(np.deg2rad(45)))
        assert ch == pytest.approx(np.sin(np.deg2rad(45)))

    @settings(max_examples=50, deadline=None)
    @given(
        re_v=st.floats(-2, 2),
        im_v=st.floats(-2, 2),
        re_h=st.floats(-2, 2),
        beta=st.floats(-7, 7),
    )
    def test_energy_preserved(self, re_v, im_v, re_h, beta):
        c_tv = complex(re_v, im_v)
        c_th = complex(re_h, 0.3)
        ue = UeAntenna(c_tv=c_tv, c_th=c_th, beta=beta)
        cv, ch = tilt_rotate(ue)
        assert abs(cv) ** 2 + abs(ch) ** 2 == pytest.approx(
            abs(c_tv) ** 2 + abs(c_th) ** 2, rel=1e-12
        )


class TestBMatrix:
    def test_zero_delay_single_tone(self):
        # one tone at zero baseband frequency: no delay phase anywhere
        spec = SignalSpec(np.array([0.0]), np.array([1.0]), 1.0)
        ue = UeAntenna(c_tv=0.8 + 0.1j, c_th=0.2, beta=0.0)
        params = LosParams(theta=1.0, phi=0.5, tau=3e-8, alpha_vv=1, alpha_hh=1)
        b = build_b_matrix(isotropic_model(), params, ue, spec)
        cv, ch = tilt_rotate(ue)
        assert b.shape == (1, 4)
        assert b[0, 0] == pytest.approx(cv)
        assert b[0, 1] == pytest.approx(ch)
        assert b[0, 2] == pytest.approx(cv)
        assert b[0, 3] == pytest.approx(ch)

    def test_linear_in_amplitudes(self, rng):
        model = random_model(rng)
        spec = random_spec(rng)
        doubled = SignalSpec(spec.frequencies, 2 * spec.amplitudes, spec.noise_variance)
        ue = random_ue(rng)
        params = random_link(rng)
        b1 = build_b_matrix(model, params, ue, spec)
        b2 = build_b_matrix(model, params, ue, doubled)
        assert np.allclose(b2, 2 * b1)

    def test_against_elementwise_sum(self, rng):
        """Oracle: the observation written as an explicit scalar double sum
        over elements and tones."""
        model = random_model(rng, elements=3)
        spec = random_spec(rng, n_freq=5)
        ue = random_ue(rng)
        params = random_link(rng)
        got = los_signal(model, params, ue, spec)

        from dmimo.eadf import evaluate_response

        cv_resp = evaluate_response(model, params.theta, params.phi, "V")
        ch_resp = evaluate_response(model, params.theta, params.phi, "H")
        ctv, cth = tilt_rotate(ue)
        expected = np.zeros(3 * 5, dtype=complex)
        for n in range(3):
            for f in range(5):
                taper = spec.amplitudes[f] * np.exp(
                    -2j * np.pi * spec.frequencies[f] * params.tau
                )
                expected[n * 5 + f] = (
                    params.alpha_vv * ctv * cv_resp[n]
                    + params.alpha_hh * cth * ch_resp[n]
                ) * taper
        assert np.max(np.abs(got - expected)) < 1e-12 * np.max(np.abs(expected))

    def test_gamma_ordering(self, rng):
        """Columns pair with (VV, VH, HV, HH): receive pol switches between
        column pairs, transmit tilt gain alternates within pairs."""
        model = random_model(rng)
        spec = random_spec(rng, n_freq=3)
        ue = random_ue(rng)
        params = random_link(rng)
        b = build_b_matrix(model, params, ue, spec)
        cv, ch = tilt_rotate(ue)
        assert np.allclose(b[:, 0] * ch, b[:, 1] * cv)
        assert np.allclose(b[:, 2] * ch, b[:, 3] * cv)


class TestFreeSpaceGain:
    def test_direct_formula(self):
        gain = free_space_gain(0.0536, np.zeros(3), np.array([1.0, 0, 0]))
        assert gain == pytest.approx(0.0536 / (4 * np.pi))

    def test_inverse_distance(self):
        g1 = free_space_gain(0.0536, np.zeros(3), np.array([1.0, 0, 0]))
        g2 = free_space_gain(0.0536, np.zeros(3), np.array([2.0, 0, 0]))
        assert g1 == pytest.approx(2 * g2)

    def test_diagonal_distance(self):
        gain = free_space_gain(0.0536, np.zeros(3), np.array([2.0, 2.0, 2.0]))
        assert gain == pytest.approx(0.0536 / (4 * np.pi * 2 * np.sqrt(3)))

    def test_coincident_rejected(self):
        with pytest.raises(ValueError):
            free_space_gain(0.05, np.ones(3), np.ones(3))


class TestSynthesizeReceived:
    def test_noiseless_limit(self, rng):
        model = random_model(rng)
        spec = random_spec(rng, noise_variance=1e-30)
        ue = random_ue(rng)
        params = random_link(rng)
        clean = los_signal(model, params, ue, spec)
        noisy = synthesize_received(model, params, ue, spec, SeededStream(3))
        assert np.max(np.abs(noisy - clean)) < 1e-12 * np.max(np.abs(clean))

    def test_deterministic(self, rng):
        model = random_model(rng)
        spec = random_spec(rng)
        ue = random_ue(rng)
        params = random_link(rng)
        a = synthesize_received(model, params, ue, spec, SeededStream(11))
        b = synthesize_received(model, params, ue, spec, SeededStream(11))
        assert np.array_equal(a, b)

    def test_noise_variance(self, rng):
        model = isotropic_model()
        spec = SignalSpec(np.array([0.0, 1e6]), np.ones(2), 0.25)
        ue = UeAntenna(c_tv=1.0, c_th=0.0)
        params = LosParams(theta=1.0, phi=0.0, tau=1e-8, alpha_vv=0, alpha_hh=0)
        draws = []
        for i in range(200):
            draws.append(synthesize_received(model, params, ue, spec, SeededStream(1, i)))
        noise = np.concatenate(draws)  # 400 complex samples per 200 draws
        empirical = np.mean(np.abs(noise) ** 2)
        assert empirical == pytest.approx(0.25, rel=0.02)


class TestEffectiveBandwidth:
    def test_single_tone_zero(self):
        spec = SignalSpec(np.array([0.0]), np.array([1.0]), 1.0)
        assert effective_bandwidth(spec) == 0.0

    def test_symmetric_pair(self):
        f0 = 5e6
        spec = SignalSpec(np.array([-f0, f0]), np.ones(2), 1.0)
        assert effective_bandwidth(spec) == pytest.approx(f0)

    def test_flat_spectrum_direct_sum(self):
        freqs = np.linspace(-200e6, 200e6, 32)
        spec = SignalSpec(freqs, np.ones(32), 1.0)
        direct = np.sqrt(np.sum(freqs**2 * 1.0) / 32.0)
        assert effective_bandwidth(spec) == pytest.approx(direct, rel=1e-12)


class TestValidation:
    def test_tau_positive(self):
        with pytest.raises(ValueError):
            LosParams(theta=0.0, phi=0.0, tau=0.0, alpha_vv=1, alpha_hh=1)

    def test_antenna_not_both_zero(self):
        with pytest.raises(ValueError):
            UeAntenna(c_tv=0.0, c_th=0.0)

    def test_spec_energy_positive(self):
        with pytest.raises(ValueError):
            SignalSpec(np.array([0.0]), np.array([0.0]), 1.0)

    def test_spec_noise_positive(self):
        with pytest.raises(ValueError):
            SignalSpec(np.array([0.0]), np.array([1.0]), 0.0)
