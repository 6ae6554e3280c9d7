"""Effective aperture distribution functions (EADFs).

An EADF stores the 2D Fourier coefficients of a radiation pattern sampled
on a full-period (elevation x azimuth) grid, one coefficient block per
(element, polarization). Evaluating the inverse transform at arbitrary
angles reconstructs the array response anywhere on the sphere, and the
angle derivatives come out in closed form because differentiation acts
diagonally on the Fourier basis.

Grid convention: both axes are sampled over [0, 2*pi) with an even number
of samples, elevation in rows and azimuth in columns. Physical patterns
measured on elevation [0, pi] must be mirror-extended first; see
`mirror_extend_elevation`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import SeededStream

POLARIZATIONS = ("V", "H")

_POL_INDEX = {"V": 0, "H": 1}


class PatternFormatError(ValueError):
    """Malformed pattern text; carries the offending line number."""

    def __init__(self, message, line=None):
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(message + suffix)
        self.line = line


def _pol_index(polarization) -> int:
    try:
        return _POL_INDEX[polarization]
    except KeyError:
        raise ValueError(f"polarization must be 'V' or 'H', got {polarization!r}")


@dataclass(frozen=True, eq=False)
class PatternGrid:
    """Complex gains sampled on the full-period angle grid.

    samples has shape (N, 2, M_theta, M_phi): element, polarization (V, H),
    elevation row at 2*pi*k/M_theta, azimuth column at 2*pi*l/M_phi.
    """

    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 4 or samples.shape[1] != 2:
            raise ValueError(
                "samples must have shape (elements, 2, m_theta, m_phi), "
                f"got {samples.shape}"
            )
        if samples.shape[2] % 2 or samples.shape[3] % 2:
            raise ValueError("angle sample counts must be even on both axes")
        if samples.shape[2] < 2 or samples.shape[3] < 2:
            raise ValueError("need at least two samples per angle axis")
        if not np.all(np.isfinite(samples)):
            raise ValueError("pattern samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def element_count(self) -> int:
        return self.samples.shape[0]

    @property
    def m_theta_count(self) -> int:
        return self.samples.shape[2]

    @property
    def m_phi_count(self) -> int:
        return self.samples.shape[3]

    @property
    def theta_angles(self) -> np.ndarray:
        m = self.m_theta_count
        return 2.0 * np.pi * np.arange(m) / m

    @property
    def phi_angles(self) -> np.ndarray:
        m = self.m_phi_count
        return 2.0 * np.pi * np.arange(m) / m


@dataclass(frozen=True, eq=False)
class EadfModel:
    """2D Fourier coefficients of a sampled pattern, one row per port.

    Row layout: element outer, polarization inner (row = 2*element + pol).
    Column layout matches the Kronecker weight ordering: column index is
    i_theta * m_phi + i_phi, where i_* walk the symmetric index vectors
    [-M/2, ..., M/2 - 1]. Coefficients are the raw (unnormalized) DFT of
    the samples; evaluation divides by m_theta * m_phi so that the model
    reproduces the pattern samples exactly at grid directions.
    """

    coefficients: np.ndarray
    m_theta: int
    m_phi: int
    normalized: bool = False

    def __post_init__(self):
        coeff = np.asarray(self.coefficients, dtype=complex)
        if coeff.ndim != 2 or coeff.shape[0] % 2:
            raise ValueError("coefficients must be (2*elements, m_theta*m_phi)")
        if coeff.shape[1] != self.m_theta * self.m_phi:
            raise ValueError("coefficient columns do not match the grid size")
        if self.m_theta % 2 or self.m_phi % 2:
            raise ValueError("grid sizes must be even")
        if not np.all(np.isfinite(coeff)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coeff)

    @property
    def element_count(self) -> int:
        return self.coefficients.shape[0] // 2

    @property
    def theta_index(self) -> np.ndarray:
        return np.arange(-self.m_theta // 2, self.m_theta // 2)

    @property
    def phi_index(self) -> np.ndarray:
        return np.arange(-self.m_phi // 2, self.m_phi // 2)

    def pol_rows(self, polarization) -> np.ndarray:
        """Coefficient rows of one polarization, shape (N, m_theta*m_phi)."""
        return self.coefficients[_pol_index(polarization):: 2]


def build_eadf(pattern: PatternGrid) -> EadfModel:
    """Transform a sampled pattern into its Fourier-coefficient model.

    A constant pattern maps to a single coefficient m_theta*m_phi at the
    (0, 0) index; evaluating the model at any grid direction reproduces
    the source sample (inverse-pair round trip).
    """
    mt, mp = pattern.m_theta_count, pattern.m_phi_count
    spectrum = np.fft.fft2(pattern.samples, axes=(-2, -1))
    spectrum = np.fft.fftshift(spectrum, axes=(-2, -1))
    coeff = spectrum.reshape(pattern.element_count * 2, mt * mp)
    return EadfModel(coeff, mt, mp, normalized=False)


def normalize_eadf(model: EadfModel, frequency_count: int) -> EadfModel:
    """Scale each element so its expected energy across the band is one.

    The energy of element n is frequency_count times the coefficient power
    summed over both polarizations and all angle indices (the stored model
    represents one frequency sample standing in for the whole band). Only
    a single positive scale per element is applied, so intra-element
    structure and inter-element amplitude differences are preserved.
    """
    if frequency_count < 1:
        raise ValueError("frequency_count must be positive")
    coeff = model.coefficients.reshape(model.element_count, 2, -1)
    energy = frequency_count * np.sum(np.abs(coeff) ** 2, axis=(1, 2))
    if np.any(energy == 0.0):
        bad = int(np.nonzero(energy == 0.0)[0][0])
        raise ValueError(f"element {bad} has zero pattern energy")
    scaled = coeff / np.sqrt(energy)[:, None, None]
    return EadfModel(
        scaled.reshape(model.coefficients.shape),
        model.m_theta,
        model.m_phi,
        normalized=True,
    )


def _axis_weights(index: np.ndarray, angle, derivative: bool) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    if not np.all(np.isfinite(angle)):
        raise ValueError("angles must be finite")
    w = np.exp(1j * np.multiply.outer(index.astype(float), angle))
    if derivative:
        w = (1j * index.astype(float)).reshape((-1,) + (1,) * angle.ndim) * w
    return w


def _kron_weights(model: EadfModel, theta, phi, d_theta=False, d_phi=False):
    """Kronecker angle weights, shape (m_theta*m_phi,) or (..., batch)."""
    wt = _axis_weights(model.theta_index, theta, d_theta)
    wp = _axis_weights(model.phi_index, phi, d_phi)
    if wt.ndim == 1:
        return np.kron(wt, wp)
    combined = wt[:, None, :] * wp[None, :, :]
    return combined.reshape(model.m_theta * model.m_phi, -1)


def evaluate_response(model: EadfModel, theta, phi, polarization) -> np.ndarray:
    """Array response at direction (theta, phi) for one polarization.

    Returns a complex vector of length N (or (N, batch) for array inputs).
    2*pi periodic in both angles.
    """
    weights = _kron_weights(model, theta, phi)
    scale = 1.0 / (model.m_theta * model.m_phi)
    return scale * (model.pol_rows(polarization) @ weights)


def evaluate_response_derivative(
    model: EadfModel, theta, phi, polarization, wrt
) -> np.ndarray:
    """Angle derivative of the array response, exact in closed form.

    Differentiation multiplies the per-axis weights elementwise by
    j * (index vector); `wrt` selects 'theta' or 'phi'.
    """
    if wrt not in ("theta", "phi"):
        raise ValueError(f"wrt must be 'theta' or 'phi', got {wrt!r}")
    weights = _kron_weights(
        model, theta, phi, d_theta=(wrt == "theta"), d_phi=(wrt == "phi")
    )
    scale = 1.0 / (model.m_theta * model.m_phi)
    return scale * (model.pol_rows(polarization) @ weights)


def upa_element_offsets(rows: int, cols: int, spacing_wavelengths: float):
    """Element (y, z) offsets of a centered planar array, in wavelengths."""
    ys = (np.arange(cols) - (cols - 1) / 2.0) * spacing_wavelengths
    zs = (np.arange(rows) - (rows - 1) / 2.0) * spacing_wavelengths
    offsets = [(y, z) for z in zs for y in ys]
    return np.array(offsets)


def synthesize_ideal_upa(
    rows: int,
    cols: int,
    spacing_wavelengths: float,
    m_theta: int,
    m_phi: int,
) -> PatternGrid:
    """Sampled pattern of an ideal uniform planar array.

    Elements sit in the local y-z plane (boresight +x) on a centered grid.
    Each element carries the pure geometric plane-wave phase on the V port
    and exactly zero on the H port (perfect cross-polarization isolation,
    no inter-element imbalances).
    """
    if rows < 1 or cols < 1:
        raise ValueError("array must have at least one element")
    if spacing_wavelengths <= 0:
        raise ValueError("element spacing must be positive")
    offsets = upa_element_offsets(rows, cols, spacing_wavelengths)
    thetas = 2.0 * np.pi * np.arange(m_theta) / m_theta
    phis = 2.0 * np.pi * np.arange(m_phi) / m_phi
    tg, pg = np.meshgrid(thetas, phis, indexing="ij")
    uy = np.sin(tg) * np.sin(pg)
    uz = np.cos(tg)
    n = rows * cols
    samples = np.zeros((n, 2, m_theta, m_phi), dtype=complex)
    for i, (y, z) in enumerate(offsets):
        samples[i, 0] = np.exp(2j * np.pi * (y * uy + z * uz))
    return PatternGrid(samples)


def perturb_pattern(
    pattern: PatternGrid,
    stream: SeededStream,
    magnitude_sigma_db: float = 0.5,
    phase_limit_deg: float = 5.0,
    leakage_db: float = -20.0,
) -> PatternGrid:
    """Apply element-level imperfections to a pattern.

    Each (element, polarization) gets a complex gain with log-normal
    magnitude (sigma in dB) and uniform phase within +-phase_limit_deg,
    and each port additionally leaks the opposite port's jittered pattern
    at the given level. Deterministic for a given stream, so perturbed
    arrays are reproducible test subjects.
    """
    rng = stream.generator()
    n = pattern.element_count
    mag = 10.0 ** (rng.normal(0.0, magnitude_sigma_db, size=(n, 2)) / 20.0)
    phase = rng.uniform(
        -np.deg2rad(phase_limit_deg), np.deg2rad(phase_limit_deg), size=(n, 2)
    )
    gains = mag * np.exp(1j * phase)
    leak_mag = 10.0 ** (rng.normal(0.0, magnitude_sigma_db, size=(n, 2)) / 20.0)
    leak_phase = rng.uniform(-np.pi, np.pi, size=(n, 2))
    leak_gains = 10.0 ** (leakage_db / 20.0) * leak_mag * np.exp(1j * leak_phase)
    jittered = gains[:, :, None, None] * pattern.samples
    leaked = jittered.copy()
    leaked[:, 0] += leak_gains[:, 0, None, None] * jittered[:, 1]
    leaked[:, 1] += leak_gains[:, 1, None, None] * jittered[:, 0]
    return PatternGrid(leaked)


def mirror_extend_elevation(half_samples: np.ndarray) -> PatternGrid:
    """Extend a physical pattern given on elevation [0, pi] to the full period.

    half_samples has shape (N, 2, M_theta//2 + 1, M_phi): rows cover
    elevation 0 .. pi inclusive on the target grid. Rows beyond pi are
    filled with the same physical direction reached through (2*pi - theta,
    phi + pi), which is the standard periodic continuation of a sphere.
    """
    half = np.asarray(half_samples, dtype=complex)
    if half.ndim != 4 or half.shape[1] != 2:
        raise ValueError("half_samples must be (elements, 2, m_half+1, m_phi)")
    m_half = half.shape[2] - 1
    m_theta = 2 * m_half
    m_phi = half.shape[3]
    if m_phi % 2:
        raise ValueError("azimuth sample count must be even")
    full = np.empty(half.shape[:2] + (m_theta, m_phi), dtype=complex)
    full[:, :, : m_half + 1] = half
    shift = m_phi // 2
    for k in range(m_half + 1, m_theta):
        full[:, :, k] = np.roll(half[:, :, m_theta - k], shift, axis=-1)
    return PatternGrid(full)


PATTERN_HEADER = "eadf-pattern v1"


def dump_pattern(pattern: PatternGrid) -> str:
    """Serialize a pattern grid to the plain-text interchange format.

    Header line `eadf-pattern v1 N M_theta M_phi`, then one `re im` line
    per (element, polarization, elevation, azimuth) in row-major order.
    Values use shortest round-trip decimal so parsing is exact.
    """
    n, _, mt, mp = pattern.samples.shape
    lines = [f"{PATTERN_HEADER} {n} {mt} {mp}"]
    flat = pattern.samples.reshape(-1)
    for value in flat:
        lines.append(f"{float(value.real)!r} {float(value.imag)!r}")
    return "\n".join(lines) + "\n"


def parse_pattern(text: str) -> PatternGrid:
    """Parse the text format produced by `dump_pattern`."""
    lines = text.splitlines()
    if not lines:
        raise PatternFormatError("empty pattern file", line=1)
    header = lines[0].split()
    if len(header) != 5 or " ".join(header[:2]) != PATTERN_HEADER:
        raise PatternFormatError("bad header, expected 'eadf-pattern v1 N Mt Mp'", line=1)
    try:
        n, mt, mp = (int(tok) for tok in header[2:])
    except ValueError:
        raise PatternFormatError("header sizes must be integers", line=1)
    expected = n * 2 * mt * mp
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != expected:
        raise PatternFormatError(
            f"expected {expected} sample lines, found {len(body)}", line=len(lines)
        )
    flat = np.empty(expected, dtype=complex)
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != 2:
            raise PatternFormatError("each sample line must be 're im'", line=i + 2)
        try:
            flat[i] = complex(float(parts[0]), float(parts[1]))
        except ValueError:
            raise PatternFormatError("non-numeric sample value", line=i + 2)
    return PatternGrid(flat.reshape(n, 2, mt, mp))


def save_pattern(pattern: PatternGrid, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dump_pattern(pattern))


def load_pattern(path) -> PatternGrid:
    with open(path, "r", encoding="ascii") as fh:
        return parse_pattern(fh.read())
