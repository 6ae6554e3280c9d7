"""Fisher information and position error bounds for AP-UE links.

The per-link information matrix is the Gram matrix of the observation's
closed-form derivative stack, scaled by 2/noise_variance. Every derivative
column factorizes into (pattern-space vector) x (frequency taper), and the
frequency-space inner products are delay-independent constants, so batches
of directions reduce to a single einsum over pattern vectors.

Parameter ordering everywhere: (theta, phi, tau, Re a_vv, Im a_vv,
Re a_hh, Im a_hh).

Geometry conventions: elevation theta is measured from the local +z axis,
azimuth phi from the local +x axis; an AP's local frame is rotated by
omega counterclockwise about z relative to the global frame, so a local
azimuth phi appears as phi + omega globally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mathcore
from .eadf import EadfModel, evaluate_response, evaluate_response_derivative
from .mathcore import (
    SPEED_OF_LIGHT,
    SingularGeometryError,
    SingularMatrixError,
    bessel_i_ratio,
    check_symmetric,
    psd_inverse,
    rotation_z,
    symmetrize,
)
from .signal_model import LosParams, SignalSpec, UeAntenna, tilt_rotate

PARAM_NAMES = ("theta", "phi", "tau", "re_avv", "im_avv", "re_ahh", "im_ahh")
XI_SLICE = slice(0, 3)
ALPHA_SLICE = slice(3, 7)

ELEVATION_SINGULARITY_TOL = 1e-6

LOCAL = "LOCAL"
GLOBAL = "GLOBAL"


def _check_psd(matrix: np.ndarray, name: str):
    eigvals = np.linalg.eigvalsh(symmetrize(matrix))
    scale = max(float(np.trace(matrix)), float(eigvals[-1]), 0.0)
    if eigvals[0] < -mathcore.PSD_TOL_REL * max(scale, 1e-300):
        raise ValueError(f"{name} is not positive semidefinite")


@dataclass(frozen=True, eq=False)
class FimTheta:
    """Symmetric 7x7 information matrix of one link's parameter vector."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (7, 7):
            raise ValueError("parameter FIM must be 7x7")
        check_symmetric(m, name="parameter FIM")
        _check_psd(m, "parameter FIM")
        object.__setattr__(self, "matrix", symmetrize(m))

    @property
    def xi_xi(self) -> np.ndarray:
        return self.matrix[XI_SLICE, XI_SLICE]

    @property
    def xi_alpha(self) -> np.ndarray:
        return self.matrix[XI_SLICE, ALPHA_SLICE]

    @property
    def alpha_alpha(self) -> np.ndarray:
        return self.matrix[ALPHA_SLICE, ALPHA_SLICE]


@dataclass(frozen=True, eq=False)
class PositionFim:
    """Symmetric 3x3 position information matrix with its frame tag."""

    matrix: np.ndarray
    frame: str = LOCAL

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("position FIM must be 3x3")
        if self.frame not in (LOCAL, GLOBAL):
            raise ValueError("frame must be LOCAL or GLOBAL")
        check_symmetric(m, name="position FIM")
        _check_psd(m, "position FIM")
        object.__setattr__(self, "matrix", symmetrize(m))


@dataclass(frozen=True, eq=False)
class ApGeometry:
    """Access point pose: position and local-frame azimuth offset."""

    position: np.ndarray
    omega: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ValueError("AP position must be a finite 3-vector")
        if not np.isfinite(self.omega):
            raise ValueError("omega must be finite")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class TiltPrior:
    """Circular prior on the device tilt angle (mean mu, concentration kappa)."""

    mu: float
    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("concentration must be nonnegative")

    @property
    def rho(self) -> float:
        """Second circular moment weight I2(kappa)/I0(kappa) * cos(2*mu)."""
        return bessel_i_ratio(self.kappa) * np.cos(2.0 * self.mu)

    def expected_cos_squared(self) -> float:
        return 0.5 * (1.0 + self.rho)

    def expected_sin_squared(self) -> float:
        return 0.5 * (1.0 - self.rho)


def los_geometry(ap: ApGeometry, ue_pos) -> tuple[float, float, float]:
    """Arrival angles and delay of the AP->UE direct path, in the AP frame."""
    rel = np.asarray(ue_pos, dtype=float) - ap.position
    local = rotation_z(ap.omega).T @ rel
    d = float(np.linalg.norm(local))
    if d == 0.0:
        raise ValueError("UE coincides with the AP")
    theta = float(np.arccos(np.clip(local[2] / d, -1.0, 1.0)))
    phi = float(np.arctan2(local[1], local[0]))
    return theta, phi, d / SPEED_OF_LIGHT


def los_geometry_batch(ap: ApGeometry, ue_positions) -> tuple[np.ndarray, ...]:
    """Vectorized `los_geometry` over rows of ue_positions, shape (B, 3)."""
    rel = np.asarray(ue_positions, dtype=float) - ap.position
    local = rel @ rotation_z(ap.omega)
    d = np.linalg.norm(local, axis=1)
    if np.any(d == 0.0):
        raise ValueError("a UE position coincides with the AP")
    thetas = np.arccos(np.clip(local[:, 2] / d, -1.0, 1.0))
    phis = np.arctan2(local[:, 1], local[:, 0])
    return thetas, phis, d / SPEED_OF_LIGHT


def _frequency_grams(spec: SignalSpec) -> np.ndarray:
    """7x7 complex matrix of frequency-space inner products per column pair.

    Column tau carries the -j*2*pi*f weighted taper; all other columns the
    plain taper. The delay phase cancels in every product, so the entries
    depend only on the tone amplitudes and frequencies.
    """
    weights = spec.amplitudes**2
    e_s = np.sum(weights)
    m1 = np.sum(spec.frequencies * weights)
    m2 = np.sum(spec.frequencies**2 * weights)
    plain = e_s
    plain_tau = -2j * np.pi * m1  # plain^H (d taper)
    tau_tau = 4.0 * np.pi**2 * m2
    gram = np.full((7, 7), plain, dtype=complex)
    gram[2, :] = np.conj(plain_tau)
    gram[:, 2] = plain_tau
    gram[2, 2] = tau_tau
    return gram


def _pattern_stacks(
    model: EadfModel, thetas, phis, alpha_vv, alpha_hh, ctv: complex, cth: complex
):
    """Per-branch pattern-space derivative vectors, shape (B, N, 7) each.

    The V branch collects every term carrying the receive-V pattern (path
    gain alpha_vv, transmit weight ctv), the H branch likewise. Column
    tau's pattern part is the plain response; the frequency-space weighting
    is accounted for separately.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    a_vv = np.atleast_1d(np.asarray(alpha_vv, dtype=complex))
    a_hh = np.atleast_1d(np.asarray(alpha_hh, dtype=complex))
    n = model.element_count
    b = thetas.size

    stacks = {}
    for pol, gain, tilt_gain, g_cols in (
        ("V", a_vv, ctv, (3, 4)),
        ("H", a_hh, cth, (5, 6)),
    ):
        resp = evaluate_response(model, thetas, phis, pol).reshape(n, b).T
        d_th = (
            evaluate_response_derivative(model, thetas, phis, pol, "theta")
            .reshape(n, b)
            .T
        )
        d_ph = (
            evaluate_response_derivative(model, thetas, phis, pol, "phi")
            .reshape(n, b)
            .T
        )
        stack = np.zeros((b, n, 7), dtype=complex)
        scaled = (gain * tilt_gain)[:, None]
        stack[:, :, 0] = scaled * d_th
        stack[:, :, 1] = scaled * d_ph
        stack[:, :, 2] = scaled * resp
        stack[:, :, g_cols[0]] = tilt_gain * resp
        stack[:, :, g_cols[1]] = 1j * tilt_gain * resp
        stacks[pol] = stack
    return stacks


def fim_theta_batch(
    model: EadfModel,
    thetas,
    phis,
    taus,
    alpha_vv,
    alpha_hh,
    ue: UeAntenna,
    spec: SignalSpec,
) -> np.ndarray:
    """Information matrices for a batch of links sharing one model and UE.

    Returns shape (B, 7, 7). `taus` only fixes the delay phases, which
    cancel in every Gram entry, so it is accepted for interface symmetry
    but not used numerically.
    """
    del taus
    ctv, cth = tilt_rotate(ue)
    stacks = _pattern_stacks(model, thetas, phis, alpha_vv, alpha_hh, ctv, cth)
    combined = stacks["V"] + stacks["H"]
    gram = np.einsum("bni,bnj->bij", np.conj(combined), combined)
    weighted = gram * _frequency_grams(spec)[None, :, :]
    return (2.0 / spec.noise_variance) * weighted.real


def fim_theta(
    model: EadfModel, params: LosParams, ue: UeAntenna, spec: SignalSpec
) -> FimTheta:
    """Information matrix of one link's parameters (theta, phi, tau, gains)."""
    batch = fim_theta_batch(
        model,
        params.theta,
        params.phi,
        params.tau,
        params.alpha_vv,
        params.alpha_hh,
        ue,
        spec,
    )
    return FimTheta(symmetrize(batch[0]))


def signal_derivative_stack(
    model: EadfModel, params: LosParams, ue: UeAntenna, spec: SignalSpec
) -> np.ndarray:
    """Full observation derivative stack, shape (N * n_freq, 7).

    Used by tests as the explicit construction behind `fim_theta`; the
    production path never materializes it.
    """
    from .signal_model import delay_taper

    ctv, cth = tilt_rotate(ue)
    stacks = _pattern_stacks(
        model, params.theta, params.phi, params.alpha_vv, params.alpha_hh, ctv, cth
    )
    combined = (stacks["V"] + stacks["H"])[0]  # (N, 7)
    bf = delay_taper(spec, params.tau)
    dbf = -2j * np.pi * spec.frequencies * bf
    columns = []
    for col in range(7):
        taper = dbf if col == 2 else bf
        columns.append(np.kron(combined[:, col], taper))
    return np.column_stack(columns)


def _structural_alpha_split(fim: FimTheta):
    """Indices of gain parameters that carry any information or coupling.

    A gain whose diagonal entry and couplings are exactly zero (a branch
    that is switched off, e.g. a purely V-polarized setup) is excluded
    from the nuisance elimination: it is unobservable but uncoupled, so it
    cannot influence the angle/delay information.
    """
    active = []
    for i in range(4):
        col = 3 + i
        if fim.matrix[col, col] != 0.0 or np.any(fim.matrix[col, :] != 0.0):
            active.append(i)
    return active


def efim_xi(
    fim: FimTheta, condition_limit: float = mathcore.CONDITION_LIMIT
) -> np.ndarray:
    """Equivalent 3x3 information for (theta, phi, tau) after removing
    the unknown complex gains by Schur complement."""
    active = _structural_alpha_split(fim)
    f_xx = fim.xi_xi
    if not active:
        return symmetrize(f_xx.copy())
    f_xa = fim.xi_alpha[:, active]
    f_aa = fim.alpha_alpha[np.ix_(active, active)]
    try:
        f_aa_inv = psd_inverse(f_aa, condition_limit=condition_limit)
    except SingularMatrixError as err:
        raise SingularMatrixError(
            f"gain block not invertible: {err}",
            condition=err.condition,
            null_direction=err.null_direction,
        )
    return symmetrize(f_xx - f_xa @ f_aa_inv @ f_xa.T)


def crlb_xi(
    fim: FimTheta, condition_limit: float = mathcore.CONDITION_LIMIT
) -> np.ndarray:
    """Covariance lower bound of (theta, phi, tau): the inverse EFIM.

    The raw EFIM mixes radians and seconds, whose scales differ by many
    orders of magnitude, so the inversion is equilibrated by expressing
    the delay as a range (tau times the speed of light) and scaling back.
    The conditioning policy then judges comparable units.
    """
    efim = efim_xi(fim, condition_limit=condition_limit)
    scale = np.diag([1.0, 1.0, 1.0 / SPEED_OF_LIGHT])
    balanced = scale @ efim @ scale
    inverse = psd_inverse(balanced, condition_limit=condition_limit)
    return symmetrize(scale @ inverse @ scale)


def _direction(theta: float, phi: float) -> np.ndarray:
    st, ct = np.sin(theta), np.cos(theta)
    return np.array([np.cos(phi) * st, np.sin(phi) * st, ct])


def rdm(theta: float, phi: float) -> np.ndarray:
    """Ranging direction matrix: rank-1 projector onto the unit direction."""
    u = _direction(theta, phi)
    return np.outer(u, u)


def rdm_2d(phi: float) -> np.ndarray:
    u = np.array([np.cos(phi), np.sin(phi)])
    return np.outer(u, u)


def _check_elevation(theta: float):
    if abs(np.sin(theta)) < ELEVATION_SINGULARITY_TOL:
        raise SingularGeometryError(
            "azimuth is unobservable within 1e-6 rad of the boresight poles"
        )


def jacobian_xi_to_p(params: LosParams) -> np.ndarray:
    """Jacobian of (theta, phi, tau) with respect to the local UE position.

    Columns are the gradients of theta, phi, tau; position information
    maps through F_p = J F_xi J^T. Fails near the elevation poles where
    azimuth degenerates.
    """
    _check_elevation(params.theta)
    theta, phi, tau = params.theta, params.phi, params.tau
    d = SPEED_OF_LIGHT * tau
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    grad_theta = np.array([ct * cp, ct * sp, -st]) / d
    grad_phi = np.array([-sp, cp, 0.0]) / (d * st)
    grad_tau = np.array([st * cp, st * sp, ct]) / SPEED_OF_LIGHT
    return np.column_stack([grad_theta, grad_phi, grad_tau])


def jacobian_xi_to_p_inverse(params: LosParams) -> np.ndarray:
    """Closed-form inverse of `jacobian_xi_to_p` (transposed position map)."""
    _check_elevation(params.theta)
    theta, phi, tau = params.theta, params.phi, params.tau
    d = SPEED_OF_LIGHT * tau
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    dp_dtheta = d * np.array([ct * cp, ct * sp, -st])
    dp_dphi = d * st * np.array([-sp, cp, 0.0])
    dp_dtau = SPEED_OF_LIGHT * np.array([st * cp, st * sp, ct])
    return np.column_stack([dp_dtheta, dp_dphi, dp_dtau]).T


def local_fim_exact(fim: FimTheta, params: LosParams) -> PositionFim:
    """Position information in the AP frame via the exact chain rule."""
    j = jacobian_xi_to_p(params)
    f_xi = efim_xi(fim)
    return PositionFim(symmetrize(j @ f_xi @ j.T), frame=LOCAL)


def local_fim_decomposed(
    f_theta_theta: float, f_phi_phi: float, f_tau_tau: float, params: LosParams
) -> PositionFim:
    """Position information from the three diagonal parameter entries.

    Sum of three rank-1 terms: elevation information along the direction
    tilted a quarter turn from the path, azimuth information along the
    horizontal tangent, and distance information along the path itself.
    Exact whenever the parameter FIM has no cross terms.
    """
    if min(f_theta_theta, f_phi_phi, f_tau_tau) < 0:
        raise ValueError("diagonal information entries must be nonnegative")
    _check_elevation(params.theta)
    theta, phi, tau = params.theta, params.phi, params.tau
    c2 = SPEED_OF_LIGHT**2
    d2 = c2 * tau**2
    matrix = (
        (f_theta_theta / d2) * rdm(theta + np.pi / 2.0, phi)
        + (f_phi_phi / (d2 * np.sin(theta) ** 2)) * rdm(np.pi / 2.0, phi + np.pi / 2.0)
        + (f_tau_tau / c2) * rdm(theta, phi)
    )
    return PositionFim(symmetrize(matrix), frame=LOCAL)


def global_fim(per_ap, ue_pos=None) -> PositionFim:
    """Sum of per-AP position information rotated into the global frame.

    Each entry pairs an ApGeometry with either a LOCAL PositionFim or a
    (f_theta_theta, f_phi_phi, f_tau_tau) triple; triples need `ue_pos`
    to recover the link geometry.
    """
    per_ap = list(per_ap)
    if not per_ap:
        raise ValueError("need at least one AP")
    total = np.zeros((3, 3))
    for entry, geom in per_ap:
        if isinstance(entry, PositionFim):
            local = entry.matrix
        else:
            if ue_pos is None:
                raise ValueError("ue_pos required when passing diagonal triples")
            f_tt, f_pp, f_tau = entry
            theta, phi, tau = los_geometry(geom, ue_pos)
            local = local_fim_decomposed(
                f_tt, f_pp, f_tau, _diag_params(theta, phi, tau)
            ).matrix
        rot = rotation_z(geom.omega)
        total += rot @ local @ rot.T
    return PositionFim(symmetrize(total), frame=GLOBAL)


def _diag_params(theta: float, phi: float, tau: float) -> LosParams:
    return LosParams(theta=theta, phi=phi, tau=tau, alpha_vv=1.0, alpha_hh=0.0)


def peb(fim, condition_limit: float = mathcore.CONDITION_LIMIT) -> float:
    """Position error bound: sqrt of the trace of the inverse information.

    Raises SingularMatrixError, reporting the unlocalizable direction,
    when the information matrix cannot be inverted reliably.
    """
    matrix = fim.matrix if isinstance(fim, PositionFim) else np.asarray(fim, float)
    inverse = psd_inverse(matrix, condition_limit=condition_limit)
    return float(np.sqrt(np.trace(inverse)))


def _planar_geometry(ap: ApGeometry, ue_pos2) -> tuple[float, float]:
    """Global bearing phi + omega and planar delay of a 2D link."""
    rel = np.asarray(ue_pos2, dtype=float) - ap.position[:2]
    d = float(np.linalg.norm(rel))
    if d == 0.0:
        raise ValueError("UE coincides with the AP")
    bearing = float(np.arctan2(rel[1], rel[0]))
    return bearing, d / SPEED_OF_LIGHT


def fim_2d(per_ap, ue_pos2) -> np.ndarray:
    """Planar position information when elevation is ignored.

    Entries pair (f_phi_phi, f_tau_tau) with an ApGeometry; azimuth
    information acts along the tangent of the bearing, distance
    information along the bearing itself.
    """
    per_ap = list(per_ap)
    if not per_ap:
        raise ValueError("need at least one AP")
    total = np.zeros((2, 2))
    c2 = SPEED_OF_LIGHT**2
    for (f_pp, f_tau), geom in per_ap:
        bearing, tau = _planar_geometry(geom, ue_pos2)
        total += (f_pp / (c2 * tau**2)) * rdm_2d(bearing + np.pi / 2.0)
        total += (f_tau / c2) * rdm_2d(bearing)
    return symmetrize(total)


def geometry_factor(per_ap, ue_pos2) -> complex:
    """Phasor sum quantifying how AP bearings shape the planar bound.

    Zero exactly at bearing layouts that make the planar information
    isotropic given the per-AP weights; its magnitude tracks how far the
    layout is from that optimum.
    """
    total = 0.0 + 0.0j
    c2 = SPEED_OF_LIGHT**2
    for (f_pp, f_tau), geom in per_ap:
        bearing, tau = _planar_geometry(geom, ue_pos2)
        weight = f_pp / (c2 * tau**2) - f_tau / c2
        total += weight * np.exp(2j * bearing)
    return complex(total)


def optimal_peb_closed_form(per_ap) -> float:
    """Planar bound at a bearing layout that zeroes the geometry factor.

    Entries are (f_phi_phi, f_tau_tau, tau) triples; the bound depends
    only on the per-AP azimuth/distance information weights once the
    phasor sum vanishes.
    """
    per_ap = list(per_ap)
    if not per_ap:
        raise ValueError("need at least one AP")
    c2 = SPEED_OF_LIGHT**2
    g = np.array([f_pp / (c2 * tau**2) for f_pp, _, tau in per_ap])
    r = np.array([f_tau / c2 for _, f_tau, _ in per_ap])
    s = float(np.sum(g) + np.sum(r))
    if s <= 0:
        raise ValueError("total information must be positive")
    cross = 2.0 * float(np.sum(g)) * float(np.sum(r))
    denominator = float(np.sum(g) - np.sum(r)) ** 2 + 2.0 * cross
    return float(np.sqrt(4.0 * s / denominator))


def cross_polar_ratio(model: EadfModel, theta: float, phi: float) -> float:
    """Diagnostic for the co- vs cross-polar response balance.

    Ratio |c_V^H c_H + c_H^H c_V| / (||c_V||^2 + ||c_H||^2); small values
    justify dropping cross-branch products in the tilt-averaged bound.
    """
    c_v = evaluate_response(model, theta, phi, "V")
    c_h = evaluate_response(model, theta, phi, "H")
    cross = np.vdot(c_v, c_h) + np.vdot(c_h, c_v)
    denom = np.vdot(c_v, c_v).real + np.vdot(c_h, c_h).real
    return float(abs(cross) / denom)


def averaged_fim_theta(
    model: EadfModel, params: LosParams, spec: SignalSpec, tilt: TiltPrior
) -> FimTheta:
    """Tilt-averaged information for a single-polarized omnidirectional UE.

    The tilt splits the observation into a cos(beta)-weighted V branch and
    a sin(beta)-weighted H branch. Averaging over the circular prior and
    dropping the (small) cross-branch pattern products leaves the two
    branch Grams weighted by (1 + rho)/2 and (1 - rho)/2.
    """
    stacks = _pattern_stacks(
        model,
        params.theta,
        params.phi,
        params.alpha_vv,
        params.alpha_hh,
        ctv=1.0,
        cth=1.0,
    )
    freq = _frequency_grams(spec)
    result = np.zeros((7, 7))
    for pol, weight in (
        ("V", tilt.expected_cos_squared()),
        ("H", tilt.expected_sin_squared()),
    ):
        stack = stacks[pol][0]
        gram = np.conj(stack).T @ stack
        result += weight * (gram * freq).real
    return FimTheta(symmetrize((2.0 / spec.noise_variance) * result))


def averaged_peb(per_ap, ue_pos) -> float:
    """Bound from tilt-averaged link information summed across APs.

    Entries pair an averaged FimTheta with the AP geometry; each link is
    reduced to angle/delay information, mapped to position space at the
    true geometry, rotated to the global frame, and summed.
    """
    per_ap = list(per_ap)
    if not per_ap:
        raise ValueError("need at least one AP")
    contributions = []
    for fim, geom in per_ap:
        theta, phi, tau = los_geometry(geom, ue_pos)
        f_xi = efim_xi(fim)
        j = jacobian_xi_to_p(_diag_params(theta, phi, tau))
        local = PositionFim(symmetrize(j @ f_xi @ j.T), frame=LOCAL)
        contributions.append((local, geom))
    return peb(global_fim(contributions))
