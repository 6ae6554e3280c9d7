import numpy as np
import pytest

from dmimo.eadf import build_eadf, normalize_eadf, synthesize_ideal_upa
from dmimo.estimator import (
    MlConfig,
    MlGridSearch,
    PositioningScenario,
    RmseReport,
    ml_estimate,
    run_monte_carlo,
)
from dmimo.fim import ApGeometry
from dmimo.signal_model import UeAntenna, los_signal


def square_scenario(snr_noise=1e-30, n_freq=8):
    pattern = synthesize_ideal_upa(2, 4, 0.5, 16, 16)
    model = normalize_eadf(build_eadf(pattern), frequency_count=n_freq)
    geometry = [
        ApGeometry(position=np.array([0.0, 0.0, 2.5]), omega=np.deg2rad(45)),
        ApGeometry(position=np.array([6.0, 0.0, 2.5]), omega=np.deg2rad(135)),
        ApGeometry(position=np.array([6.0, 6.0, 2.5]), omega=np.deg2rad(-135)),
        ApGeometry(position=np.array([0.0, 6.0, 2.5]), omega=np.deg2rad(-45)),
    ]
    scenario = PositioningScenario(
        models=[model] * 4,
        geometry=geometry,
        ue_position=np.array([2.2, 3.7, 1.5]),
        ue_antenna=UeAntenna(c_tv=1.0, c_th=0.0, beta=np.deg2rad(45)),
        frequencies=np.linspace(-200e6, 200e6, n_freq),
        amplitudes=np.ones(n_freq),
        wavelength=3e8 / 5.6e9,
    )
    return scenario, scenario.spec_with_noise(snr_noise)


def noiseless_signals(scenario, spec):
    return [
        los_signal(scenario.models[k], scenario.link_params(k), scenario.ue_antenna, spec)
        for k in range(len(scenario.models))
    ]


CONFIG = MlConfig(
    grid_extent=np.array([6.0, 6.0, 3.0]),
    coarse_step=0.4,
    refine_iterations=8,
    grid_center=np.array([3.0, 3.0, 1.5]),
)


class TestMlEstimate:
    def test_noiseless_consistency(self):
        scenario, spec = square_scenario()
        signals = noiseless_signals(scenario, spec)
        estimate = ml_estimate(signals, scenario.models, scenario.geometry, spec, CONFIG)
        tolerance = CONFIG.coarse_step * CONFIG.refine_shrink**CONFIG.refine_iterations
        assert np.linalg.norm(estimate - scenario.ue_position) <= tolerance

    def test_ap_order_invariance(self):
        scenario, spec = square_scenario()
        signals = noiseless_signals(scenario, spec)
        base = ml_estimate(signals, scenario.models, scenario.geometry, spec, CONFIG)
        perm = [2, 0, 3, 1]
        permuted = ml_estimate(
            [signals[i] for i in perm],
            [scenario.models[i] for i in perm],
            [scenario.geometry[i] for i in perm],
            spec,
            CONFIG,
        )
        assert np.array_equal(base, permuted)

    def test_concentrated_residual_orthogonal(self):
        """At the true position the least-squares gain step must leave a
        residual orthogonal to the basis columns."""
        scenario, spec = square_scenario()
        signals = noiseless_signals(scenario, spec)
        from dmimo.estimator import _BasisProjector

        for k in range(4):
            projector = _BasisProjector(
                scenario.models[k],
                scenario.geometry[k],
                spec,
                scenario.ue_position[None, :],
            )
            basis = np.conj(projector.basis_conj[:, 0, :]).T  # (S, 2)
            y = signals[k]
            coeff, *_ = np.linalg.lstsq(basis, y, rcond=None)
            residual = y - basis @ coeff
            rel = np.linalg.norm(basis.conj().T @ residual) / np.linalg.norm(y)
            assert rel < 1e-8

    def test_empty_signals_rejected(self):
        scenario, spec = square_scenario()
        with pytest.raises(ValueError):
            ml_estimate([], [], [], spec, CONFIG)

    def test_grid_center_defaults_to_centroid(self):
        scenario, spec = square_scenario()
        cfg = MlConfig(grid_extent=np.array([6.0, 6.0, 3.0]), coarse_step=1.0)
        searcher = MlGridSearch(scenario.models, scenario.geometry, spec, cfg)
        assert np.allclose(searcher.center, [3.0, 3.0, 2.5])

    def test_flat_likelihood_warns(self):
        """A single isotropic element with one zero-frequency tone carries
        no position information at all; the flatness diagnostic fires."""
        from dmimo.eadf import PatternGrid, build_eadf
        from dmimo.estimator import AmbiguityWarning
        from dmimo.signal_model import SignalSpec

        model = build_eadf(PatternGrid(np.ones((1, 2, 4, 4), dtype=complex)))
        geometry = [ApGeometry(position=np.array([0.0, 0.0, 2.0]), omega=0.0)]
        spec = SignalSpec(np.array([0.0]), np.array([1.0]), 1e-6)
        cfg = MlConfig(
            grid_extent=np.array([2.0, 2.0, 1.0]),
            coarse_step=0.5,
            refine_iterations=2,
            grid_center=np.array([3.0, 3.0, 1.0]),
        )
        signals = [np.ones(1, dtype=complex)]
        with pytest.warns(AmbiguityWarning):
            ml_estimate(signals, [model], geometry, spec, cfg)


class TestRunMonteCarlo:
    def test_deterministic(self):
        scenario, _ = square_scenario()
        a = run_monte_carlo(scenario, [20.0], 5, seed=9, config=CONFIG)
        b = run_monte_carlo(scenario, [20.0], 5, seed=9, config=CONFIG)
        assert a[0].rmse == b[0].rmse and a[0].peb == b[0].peb

    def test_worker_count_does_not_change_results(self):
        scenario, _ = square_scenario()
        a = run_monte_carlo(scenario, [20.0], 6, seed=9, config=CONFIG, workers=1)
        b = run_monte_carlo(scenario, [20.0], 6, seed=9, config=CONFIG, workers=3)
        assert a[0].rmse == b[0].rmse

    def test_near_noiseless_rmse_tiny(self):
        scenario, _ = square_scenario()
        reports = run_monte_carlo(scenario, [120.0], 1, seed=3, config=CONFIG)
        assert reports[0].rmse < 1e-2

    def test_rmse_tracks_bound(self):
        scenario, _ = square_scenario()
        reports = run_monte_carlo(scenario, [15.0, 30.0], 25, seed=5, config=CONFIG)
        assert reports[0].rmse >= reports[1].rmse  # decreasing with SNR
        assert 0.5 < reports[1].rmse / reports[1].peb < 1.6


def test_rmse_report_validation():
    with pytest.raises(ValueError):
        RmseReport(snr_db=10.0, rmse=-1.0, peb=1.0, trials=10)
    with pytest.raises(ValueError):
        RmseReport(snr_db=10.0, rmse=1.0, peb=1.0, trials=0)
