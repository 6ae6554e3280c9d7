"""One-shot maximum-likelihood positioning and its Monte Carlo harness.

The UE position is found by maximizing the concentrated log-likelihood of
the multi-AP observation: for a candidate position, each AP's unknown
complex path gains are optimal-least-squares eliminated, leaving the total
energy captured by projecting the received samples onto the two candidate
signal basis columns (receive-V and receive-H response times delay taper).
The search is a deterministic coarse grid followed by shrink-and-refine
local grids, which is robust against the likelihood's angular oscillations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .eadf import evaluate_response
from .fim import (
    fim_theta,
    global_fim,
    local_fim_exact,
    los_geometry,
    los_geometry_batch,
    peb,
)
from .mathcore import SeededStream
from .signal_model import (
    LosParams,
    SignalSpec,
    UeAntenna,
    delay_taper,
    free_space_gain,
    los_signal,
    synthesize_received,
)

_RANK_TOL = 1e-10


class AmbiguityWarning(UserWarning):
    """The likelihood surface is nearly flat in some direction."""


@dataclass(frozen=True, eq=False)
class MlConfig:
    """Grid-search configuration for the position estimator.

    The coarse stage covers an axis-aligned box of size grid_extent
    centered at grid_center (AP centroid when omitted); each refinement
    shrinks the step by refine_shrink and rescans a small local grid.
    """

    grid_extent: np.ndarray
    coarse_step: float = 0.25
    refine_iterations: int = 10
    refine_shrink: float = 0.5
    grid_center: np.ndarray | None = None

    def __post_init__(self):
        extent = np.asarray(self.grid_extent, dtype=float)
        if extent.shape != (3,) or np.any(extent <= 0):
            raise ValueError("grid_extent must be a positive 3-vector")
        if self.coarse_step <= 0:
            raise ValueError("coarse_step must be positive")
        if not 0.0 < self.refine_shrink < 1.0:
            raise ValueError("refine_shrink must lie in (0, 1)")
        if self.refine_iterations < 0:
            raise ValueError("refine_iterations must be nonnegative")
        object.__setattr__(self, "grid_extent", extent)
        if self.grid_center is not None:
            center = np.asarray(self.grid_center, dtype=float)
            if center.shape != (3,):
                raise ValueError("grid_center must be a 3-vector")
            object.__setattr__(self, "grid_center", center)


@dataclass(frozen=True)
class RmseReport:
    """Positioning error summary at one signal-to-noise point.

    rmse is the root of the mean squared position error, the quantity the
    bound lower-bounds; an efficient estimator drives the rmse/peb ratio
    to one at high SNR.
    """

    snr_db: float
    rmse: float
    peb: float
    trials: int

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be nonnegative")
        if self.trials < 1:
            raise ValueError("trials must be positive")


class MlGridSearch:
    """Reusable grid searcher: precomputes the coarse-stage projections.

    The candidate basis and its Gram eigendecompositions depend only on
    geometry and the transmit spectrum, so they are shared across noise
    realizations and SNR points.
    """

    def __init__(self, models, geometry, spec: SignalSpec, config: MlConfig):
        models = list(models)
        geometry = list(geometry)
        if not models or len(models) != len(geometry):
            raise ValueError("need one EADF model per AP")
        self.models = models
        self.geometry = geometry
        self.spec = spec
        self.config = config
        center = config.grid_center
        if center is None:
            center = np.mean([g.position for g in geometry], axis=0)
        self.center = np.asarray(center, dtype=float)
        self.coarse_positions = self._coarse_grid()
        self._coarse_cache = [
            _BasisProjector(m, g, spec, self.coarse_positions)
            for m, g in zip(models, geometry)
        ]

    def _coarse_grid(self) -> np.ndarray:
        axes = []
        for axis in range(3):
            half = self.config.grid_extent[axis] / 2.0
            n = max(int(np.floor(2.0 * half / self.config.coarse_step)) + 1, 1)
            offs = (np.arange(n) - (n - 1) / 2.0) * self.config.coarse_step
            axes.append(self.center[axis] + offs)
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def _power_at(self, signals, positions: np.ndarray) -> np.ndarray:
        total = np.zeros(positions.shape[0])
        for y, model, geom in zip(signals, self.models, self.geometry):
            projector = _BasisProjector(model, geom, self.spec, positions)
            total += projector.power(y)
        return total

    def estimate(self, signals, check_ambiguity: bool = False) -> np.ndarray:
        signals = list(signals)
        if not signals:
            raise ValueError("need at least one AP signal")
        if len(signals) != len(self.models):
            raise ValueError("signal count must match the AP count")
        coarse_power = np.zeros(self.coarse_positions.shape[0])
        for y, projector in zip(signals, self._coarse_cache):
            coarse_power += projector.power(y)
        best = self.coarse_positions[int(np.argmax(coarse_power))]
        step = self.config.coarse_step
        for _ in range(self.config.refine_iterations):
            step *= self.config.refine_shrink
            offs = np.arange(-2, 3) * step
            gx, gy, gz = np.meshgrid(*[offs] * 3, indexing="ij")
            local = best + np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
            power = self._power_at(signals, local)
            best = local[int(np.argmax(power))]
        if check_ambiguity:
            self._warn_if_flat(signals, best, max(step, 1e-4))
        return best

    def _warn_if_flat(self, signals, position, step):
        hessian = np.zeros((3, 3))
        for i in range(3):
            for j in range(i, 3):
                ei = np.zeros(3)
                ej = np.zeros(3)
                ei[i] = step
                ej[j] = step
                fpp = self._power_at(signals, (position + ei + ej)[None, :])[0]
                fpm = self._power_at(signals, (position + ei - ej)[None, :])[0]
                fmp = self._power_at(signals, (position - ei + ej)[None, :])[0]
                fmm = self._power_at(signals, (position - ei - ej)[None, :])[0]
                hessian[i, j] = hessian[j, i] = (fpp - fpm - fmp + fmm) / (
                    4.0 * step**2
                )
        eigvals = np.abs(np.linalg.eigvalsh(hessian))
        if eigvals[-1] == 0 or eigvals[0] / eigvals[-1] < 1e-10:
            warnings.warn(
                "likelihood is nearly flat in some direction at the optimum; "
                "the geometry may be ambiguous",
                AmbiguityWarning,
                stacklevel=3,
            )


class _BasisProjector:
    """Projection of observations onto the candidate signal basis.

    For positions p with link geometry (theta, phi, tau), the two basis
    columns are kron(response_V, taper) and kron(response_H, taper).
    The captured power is y^H B (B^H B)^+ B^H y, evaluated rank-aware
    through the eigendecomposition of the 2x2 Gram.
    """

    def __init__(self, model, geom, spec, positions):
        rel = np.asarray(positions, dtype=float) - geom.position
        distances = np.linalg.norm(rel, axis=1)
        self.valid = distances > 0.0
        safe = np.where(self.valid[:, None], positions, geom.position + [1.0, 0, 0])
        thetas, phis, taus = los_geometry_batch(geom, safe)
        n = model.element_count
        b = positions.shape[0]
        c_v = evaluate_response(model, thetas, phis, "V").reshape(n, b)
        c_h = evaluate_response(model, thetas, phis, "H").reshape(n, b)
        taper = delay_taper(spec, taus)  # (n_freq, B)
        cols = np.empty((2, b, n * spec.n_freq), dtype=complex)
        cols[0] = (c_v[:, None, :] * taper[None, :, :]).reshape(-1, b).T
        cols[1] = (c_h[:, None, :] * taper[None, :, :]).reshape(-1, b).T
        self.basis_conj = np.conj(cols)
        gram = np.einsum("cbs,dbs->bcd", self.basis_conj, cols)
        self.eigvals, self.eigvecs = np.linalg.eigh(gram)

    def power(self, y: np.ndarray) -> np.ndarray:
        bh_y = np.stack([self.basis_conj[0] @ y, self.basis_conj[1] @ y], axis=1)
        rotated = np.einsum("bcd,bc->bd", np.conj(self.eigvecs), bh_y)
        floor = self.eigvals[:, -1:] * _RANK_TOL
        safe = np.where(self.eigvals > floor, self.eigvals, np.inf)
        power = np.sum(np.abs(rotated) ** 2 / safe, axis=1)
        # candidates sitting exactly on the AP have no defined geometry
        return np.where(self.valid, power, -np.inf)


def ml_estimate(signals, models, geometry, spec: SignalSpec, config: MlConfig):
    """Maximum-likelihood UE position from per-AP received samples.

    Unknown per-AP complex gains are concentrated out by least squares at
    every candidate, so no knowledge of the transmit gains or tilt is
    required. Deterministic for fixed inputs and invariant to AP order.
    """
    searcher = MlGridSearch(models, geometry, spec, config)
    return searcher.estimate(signals, check_ambiguity=True)


@dataclass(frozen=True, eq=False)
class PositioningScenario:
    """Static one-shot positioning setup used by the Monte Carlo harness."""

    models: tuple
    geometry: tuple
    ue_position: np.ndarray
    ue_antenna: UeAntenna
    frequencies: np.ndarray
    amplitudes: np.ndarray
    wavelength: float

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "geometry", tuple(self.geometry))
        object.__setattr__(
            self, "ue_position", np.asarray(self.ue_position, dtype=float)
        )
        object.__setattr__(
            self, "frequencies", np.asarray(self.frequencies, dtype=float)
        )
        object.__setattr__(
            self, "amplitudes", np.asarray(self.amplitudes, dtype=float)
        )
        if len(self.models) != len(self.geometry) or not self.models:
            raise ValueError("need one model per AP")

    def link_params(self, k: int) -> LosParams:
        theta, phi, tau = los_geometry(self.geometry[k], self.ue_position)
        gain = free_space_gain(
            self.wavelength, self.geometry[k].position, self.ue_position
        )
        return LosParams(
            theta=theta, phi=phi, tau=tau, alpha_vv=gain, alpha_hh=gain
        )

    def spec_with_noise(self, noise_variance: float) -> SignalSpec:
        return SignalSpec(self.frequencies, self.amplitudes, noise_variance)

    def mean_sample_energy(self) -> float:
        """Average received per-sample signal power across APs."""
        spec = self.spec_with_noise(1.0)
        total = 0.0
        for k in range(len(self.models)):
            d = los_signal(self.models[k], self.link_params(k), self.ue_antenna, spec)
            total += float(np.sum(np.abs(d) ** 2)) / d.size
        return total / len(self.models)

    def noise_variance_for_snr(self, snr_db: float) -> float:
        """Noise power giving the requested mean per-sample receive SNR."""
        return self.mean_sample_energy() / 10.0 ** (snr_db / 10.0)

    def position_bound(self, noise_variance: float) -> float:
        spec = self.spec_with_noise(noise_variance)
        contributions = []
        for k in range(len(self.models)):
            params = self.link_params(k)
            fim = fim_theta(self.models[k], params, self.ue_antenna, spec)
            contributions.append((local_fim_exact(fim, params), self.geometry[k]))
        return peb(global_fim(contributions))


def run_monte_carlo(
    scenario: PositioningScenario,
    snr_grid_db,
    trials: int,
    seed: int,
    config: MlConfig,
    workers: int = 1,
) -> list[RmseReport]:
    """Positioning error versus bound over a grid of SNR points.

    Every trial draws its noise from a stream addressed by (SNR index,
    trial, AP), so reports are reproducible bit-for-bit regardless of the
    worker count.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    snr_grid_db = list(snr_grid_db)
    master = SeededStream(seed)
    reports = []
    for si, snr_db in enumerate(snr_grid_db):
        noise_variance = scenario.noise_variance_for_snr(snr_db)
        spec = scenario.spec_with_noise(noise_variance)
        searcher = MlGridSearch(scenario.models, scenario.geometry, spec, config)
        bound = scenario.position_bound(noise_variance)
        link_params = [scenario.link_params(k) for k in range(len(scenario.models))]

        def one_trial(trial: int) -> float:
            signals = [
                synthesize_received(
                    scenario.models[k],
                    link_params[k],
                    scenario.ue_antenna,
                    spec,
                    master.child(si, trial, k),
                )
                for k in range(len(scenario.models))
            ]
            estimate = searcher.estimate(signals)
            return float(np.linalg.norm(estimate - scenario.ue_position))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                errors = list(pool.map(one_trial, range(trials)))
        else:
            errors = [one_trial(t) for t in range(trials)]
        reports.append(
            RmseReport(
                snr_db=float(snr_db),
                rmse=float(np.sqrt(np.mean(np.square(errors)))),
                peb=bound,
                trials=trials,
            )
        )
    return reports
