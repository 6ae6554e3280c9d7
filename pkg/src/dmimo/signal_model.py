"""Polarimetric line-of-sight signal model.

Builds the per-link observation D = B * gamma: receive-side array responses
from the EADF, the transmit-side tilt-rotated antenna gains, and a
delay-weighted frequency taper. The scenario is static, so the time axis
collapses and samples are laid out element-major with frequency innermost.
The received-signal delay phase is exp(-j*2*pi*f*tau) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eadf import EadfModel, evaluate_response
from .mathcore import SeededStream


@dataclass(frozen=True)
class LosParams:
    """Estimable parameters of one AP-UE line-of-sight link.

    theta/phi are the arrival angles in the AP's local frame, tau the
    propagation delay, and alpha_vv/alpha_hh the co-polarized complex
    path gains (cross-polar gains vanish on a free-space path).
    """

    theta: float
    phi: float
    tau: float
    alpha_vv: complex
    alpha_hh: complex

    def __post_init__(self):
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValueError("delay must be positive and finite")
        for name in ("theta", "phi"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("alpha_vv", "alpha_hh"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_vector(self) -> np.ndarray:
        """Real parameter vector (theta, phi, tau, Re/Im a_vv, Re/Im a_hh)."""
        return np.array(
            [
                self.theta,
                self.phi,
                self.tau,
                self.alpha_vv.real,
                self.alpha_vv.imag,
                self.alpha_hh.real,
                self.alpha_hh.imag,
            ]
        )

    @staticmethod
    def from_vector(vec) -> "LosParams":
        vec = np.asarray(vec, dtype=float)
        return LosParams(
            theta=vec[0],
            phi=vec[1],
            tau=vec[2],
            alpha_vv=complex(vec[3], vec[4]),
            alpha_hh=complex(vec[5], vec[6]),
        )


@dataclass(frozen=True)
class UeAntenna:
    """Transmit antenna gains and the vertical tilt of the user device."""

    c_tv: complex
    c_th: complex
    beta: float = 0.0

    def __post_init__(self):
        if abs(self.c_tv) == 0 and abs(self.c_th) == 0:
            raise ValueError("antenna gains cannot both be zero")


@dataclass(frozen=True, eq=False)
class SignalSpec:
    """Transmitted baseband tones and the receiver noise level.

    frequencies are baseband offsets in Hz (a centered grid keeps the
    effective bandwidth equal to the spectral RMS width), amplitudes the
    per-tone magnitudes |s(f)|, and noise_variance the per-complex-sample
    noise power.
    """

    frequencies: np.ndarray
    amplitudes: np.ndarray
    noise_variance: float

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        amps = np.asarray(self.amplitudes, dtype=float)
        if freqs.ndim != 1 or freqs.size < 1:
            raise ValueError("need at least one frequency sample")
        if amps.shape != freqs.shape:
            raise ValueError("amplitudes must match frequencies in shape")
        if np.any(amps < 0):
            raise ValueError("amplitudes must be nonnegative")
        if not np.all(np.isfinite(freqs)) or not np.all(np.isfinite(amps)):
            raise ValueError("signal spec values must be finite")
        energy = float(np.sum(amps**2))
        if energy <= 0:
            raise ValueError("total signal energy must be positive")
        if not (self.noise_variance > 0 and np.isfinite(self.noise_variance)):
            raise ValueError("noise variance must be positive and finite")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_freq(self) -> int:
        return self.frequencies.size

    @property
    def energy(self) -> float:
        """Total transmit energy, sum of squared tone amplitudes."""
        return float(np.sum(self.amplitudes**2))

    def with_noise_variance(self, noise_variance: float) -> "SignalSpec":
        return SignalSpec(self.frequencies, self.amplitudes, noise_variance)


def tilt_rotate(ue: UeAntenna) -> tuple[complex, complex]:
    """Rotate the transmit gains by the device tilt (energy preserving)."""
    c, s = np.cos(ue.beta), np.sin(ue.beta)
    return (ue.c_tv * c - ue.c_th * s, ue.c_tv * s + ue.c_th * c)


def delay_taper(spec: SignalSpec, tau) -> np.ndarray:
    """Per-tone amplitudes with the propagation delay phase applied.

    Scalar tau gives shape (n_freq,); an array of delays gives
    (n_freq, batch).
    """
    tau = np.asarray(tau, dtype=float)
    phase = np.exp(-2j * np.pi * np.multiply.outer(spec.frequencies, tau))
    if tau.ndim == 0:
        return spec.amplitudes * phase
    return spec.amplitudes[:, None] * phase


def build_b_matrix(
    model: EadfModel, params: LosParams, ue: UeAntenna, spec: SignalSpec
) -> np.ndarray:
    """Observation basis with columns ordered (VV, VH, HV, HH).

    Column for gain alpha_{pq} combines the receive-p array response, the
    transmit-q tilt-rotated gain, and the delay taper; samples run element
    outer, frequency inner. D = B @ (a_vv, a_vh, a_hv, a_hh).
    """
    c_v = evaluate_response(model, params.theta, params.phi, "V")
    c_h = evaluate_response(model, params.theta, params.phi, "H")
    ctv, cth = tilt_rotate(ue)
    bf = delay_taper(spec, params.tau)
    rv = np.kron(c_v, bf)
    rh = np.kron(c_h, bf)
    return np.column_stack([ctv * rv, cth * rv, ctv * rh, cth * rh])


def los_signal(
    model: EadfModel, params: LosParams, ue: UeAntenna, spec: SignalSpec
) -> np.ndarray:
    """Noise-free received samples for the co-polarized line-of-sight path."""
    b = build_b_matrix(model, params, ue, spec)
    gamma = np.array([params.alpha_vv, 0.0, 0.0, params.alpha_hh])
    return b @ gamma


def free_space_gain(wavelength: float, ap_pos, ue_pos) -> float:
    """Free-space amplitude gain wavelength / (4*pi*distance)."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    d = float(np.linalg.norm(np.asarray(ap_pos, float) - np.asarray(ue_pos, float)))
    if d == 0.0:
        raise ValueError("AP and UE positions coincide")
    return wavelength / (4.0 * np.pi * d)


def synthesize_received(
    model: EadfModel,
    params: LosParams,
    ue: UeAntenna,
    spec: SignalSpec,
    stream: SeededStream,
) -> np.ndarray:
    """Noisy received samples: the LoS observation plus circular noise.

    Noise is circularly-symmetric complex Gaussian with per-sample variance
    spec.noise_variance; deterministic for a given stream.
    """
    clean = los_signal(model, params, ue, spec)
    rng = stream.generator()
    scale = np.sqrt(spec.noise_variance / 2.0)
    noise = rng.normal(0.0, scale, size=clean.shape) + 1j * rng.normal(
        0.0, scale, size=clean.shape
    )
    return clean + noise


def effective_bandwidth(spec: SignalSpec) -> float:
    """RMS spectral width: sqrt(sum f^2 |s|^2 / sum |s|^2)."""
    weights = spec.amplitudes**2
    return float(np.sqrt(np.sum(spec.frequencies**2 * weights) / np.sum(weights)))
