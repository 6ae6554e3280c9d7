import numpy as np
import pytest
from scipy import stats

from dmimo.mathcore import (
    SeededStream,
    SingularMatrixError,
    bessel_i_ratio,
    psd_inverse,
    rotation_z,
    sample_von_mises,
)


def series_i_ratio(kappa, terms=64):
    """Independent series oracle for I2(kappa)/I0(kappa).

    Terms are accumulated recursively in floats so large orders do not
    overflow intermediate factorials.
    """
    t = kappa * kappa / 4.0
    i0, term0 = 0.0, 1.0
    i2, term2 = 0.0, t / 2.0
    for m in range(terms):
        i0 += term0
        i2 += term2
        term0 *= t / (m + 1) ** 2
        term2 *= t / ((m + 1) * (m + 3))
    return i2 / i0


class TestBesselRatio:
    def test_zero(self):
        assert bessel_i_ratio(0.0) == 0.0

    def test_large_kappa_limit(self):
        assert bessel_i_ratio(200.0) > 0.99
        assert bessel_i_ratio(np.inf) == 1.0

    def test_against_series(self):
        assert bessel_i_ratio(2.0) == pytest.approx(series_i_ratio(2.0), abs=1e-10)

    @pytest.mark.parametrize("kappa", [1e-6, 1e-3, 0.5, 5.0, 50.0])
    def test_series_agreement_across_range(self, kappa):
        assert bessel_i_ratio(kappa) == pytest.approx(
            series_i_ratio(kappa, terms=120), rel=1e-9, abs=1e-14
        )

    def test_monotone_on_grid(self):
        grid = np.linspace(0.0, 50.0, 1000)
        values = [bessel_i_ratio(k) for k in grid]
        assert np.all(np.diff(values) >= 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            bessel_i_ratio(-1.0)


class TestVonMises:
    def test_uniform_limit_ks(self):
        samples = sample_von_mises(0.0, 0.0, SeededStream(7), size=20000)
        # wrap to [0, 1) and test against the uniform distribution
        u = (np.asarray(samples) + np.pi) / (2 * np.pi)
        assert stats.kstest(u, "uniform").pvalue > 0.01

    def test_concentration(self):
        samples = sample_von_mises(0.5, 1000.0, SeededStream(8), size=20000)
        assert np.std(samples) < 0.05
        assert abs(np.mean(samples) - 0.5) < 0.01

    @pytest.mark.parametrize("kappa", [0.5, 2.0, 8.0])
    def test_double_angle_moment(self, kappa):
        mu = 0.9
        n = 200000
        samples = sample_von_mises(mu, kappa, SeededStream(9).child(int(kappa * 2)), size=n)
        mc = np.mean(np.cos(2 * samples))
        expected = bessel_i_ratio(kappa) * np.cos(2 * mu)
        se = np.std(np.cos(2 * samples)) / np.sqrt(n)
        assert abs(mc - expected) < 3 * se


class TestPsdInverse:
    def test_identity(self):
        assert np.allclose(psd_inverse(np.eye(4)), np.eye(4))

    def test_condition_policy_trigger(self):
        with pytest.raises(SingularMatrixError) as exc:
            psd_inverse(np.diag([1.0, 1e-15]), condition_limit=1e12)
        assert exc.value.condition > 1e12 or np.isinf(exc.value.condition)
        assert exc.value.null_direction is not None

    def test_random_spd_residual(self, rng):
        for _ in range(20):
            a = rng.normal(size=(7, 7))
            spd = a @ a.T + 7 * np.eye(7)
            inv = psd_inverse(spd)
            residual = np.linalg.norm(spd @ inv - np.eye(7))
            assert residual < 1e-8

    def test_asymmetric_rejected(self):
        m = np.array([[1.0, 2.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            psd_inverse(m)


class TestSeededStreams:
    def test_deterministic(self):
        a = SeededStream(42, 3).generator().normal(size=5)
        b = SeededStream(42, 3).generator().normal(size=5)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = SeededStream(42, 3).generator().normal(size=5)
        b = SeededStream(42, 4).generator().normal(size=5)
        assert not np.array_equal(a, b)

    def test_child_addressing(self):
        s = SeededStream(42)
        assert s.child(1, 2, 3) == SeededStream(42, ((1 << 16) | 2) << 16 | 3)
        with pytest.raises(ValueError):
            s.child(1 << 16)

    def test_independence_of_consumption_order(self):
        s = SeededStream(42)
        first = s.child(5).generator().normal(size=3)
        _ = s.child(6).generator().normal(size=100)
        again = s.child(5).generator().normal(size=3)
        assert np.array_equal(first, again)


def test_rotation_z_orthogonal():
    r = rotation_z(0.7)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-14)
    assert np.isclose(np.linalg.det(r), 1.0)
    # rotates +x toward +y for positive angles
    assert np.allclose(r @ np.array([1.0, 0, 0]), [np.cos(0.7), np.sin(0.7), 0.0])
