"""Multi-user tracking: Gaussian-mixture PHD filter and supporting chain.

The filter propagates a weighted Gaussian mixture representing the
expected density of user states. Measurements are position-domain points
with per-measurement covariances, produced upstream by converting
angle/delay estimates through an unscented transform and fusing per-AP
detections of the same object into proxy measurements. A nearest-neighbor
Kalman tracker is included as the hard-association baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .fim import ApGeometry
from .mathcore import (
    SPEED_OF_LIGHT,
    psd_inverse,
    rotation_z,
    symmetrize,
)

PROXY = -1  # source_ap value for fused multi-AP measurements


@dataclass(frozen=True, eq=False)
class UeState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        vel = np.asarray(self.velocity, dtype=float)
        if pos.shape != (3,) or vel.shape != (3,):
            raise ValueError("position and velocity must be 3-vectors")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise ValueError("state must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)


def _check_covariance(cov: np.ndarray, name: str):
    scale = max(float(np.trace(cov)), 1e-300)
    if np.max(np.abs(cov - cov.T)) > 1e-10 * max(scale, 1.0):
        raise ValueError(f"{name} must be symmetric")
    eigvals = np.linalg.eigvalsh(symmetrize(cov))
    if eigvals[0] < -1e-9 * scale:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """One weighted Gaussian of the mixture intensity."""

    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if self.weight < 0 or not np.isfinite(self.weight):
            raise ValueError("weight must be nonnegative and finite")
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("covariance must be square and match the mean")
        _check_covariance(cov, "component covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", symmetrize(cov))


RANDOM_WALK = "random-walk"
CONSTANT_VELOCITY = "constant-velocity"


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Linear state transition with additive process noise.

    Random walk uses a 3D position-only state; constant velocity a 6D
    position+velocity state with the position block driven by velocity.
    """

    kind: str
    process_noise: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        if self.kind not in (RANDOM_WALK, CONSTANT_VELOCITY):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        q = np.asarray(self.process_noise, dtype=float)
        expected = 3 if self.kind == RANDOM_WALK else 6
        if q.shape != (expected, expected):
            raise ValueError(f"process noise must be {expected}x{expected}")
        _check_covariance(q, "process noise")
        object.__setattr__(self, "process_noise", symmetrize(q))

    @property
    def state_dim(self) -> int:
        return 3 if self.kind == RANDOM_WALK else 6

    def transition_matrix(self) -> np.ndarray:
        if self.kind == RANDOM_WALK:
            return np.eye(3)
        f = np.eye(6)
        f[:3, 3:] = self.dt * np.eye(3)
        return f


@dataclass(frozen=True, eq=False)
class PositionMeasurement:
    """Position-domain measurement with its own covariance and origin tag."""

    value: np.ndarray
    covariance: np.ndarray
    source_ap: int = PROXY

    def __post_init__(self):
        value = np.asarray(self.value, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if value.shape != (3,) or cov.shape != (3, 3):
            raise ValueError("measurement must be 3D with a 3x3 covariance")
        _check_covariance(cov, "measurement covariance")
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "covariance", symmetrize(cov))


@dataclass(frozen=True)
class PhdConfig:
    p_detect: float
    clutter_intensity: float  # expected clutter per unit volume
    prune_threshold: float = 1e-4
    merge_threshold: float = 4.0  # squared Mahalanobis distance
    max_components: int = 500
    birth: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError("p_detect must lie in [0, 1]")
        if self.clutter_intensity < 0:
            raise ValueError("clutter intensity must be nonnegative")
        if self.prune_threshold <= 0 or self.merge_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.max_components < 1:
            raise ValueError("max_components must be positive")
        object.__setattr__(self, "birth", tuple(self.birth))


def _observation_matrix(state_dim: int) -> np.ndarray:
    h = np.zeros((3, state_dim))
    h[:, :3] = np.eye(3)
    return h


def predict(mixture, motion: MotionModel):
    """Propagate every component through the motion model.

    Weights are untouched and the component count is preserved; birth
    components are the episode driver's responsibility.
    """
    f = motion.transition_matrix()
    q = motion.process_noise
    return [
        GaussianComponent(
            weight=c.weight,
            mean=f @ c.mean,
            covariance=symmetrize(f @ c.covariance @ f.T + q),
        )
        for c in mixture
    ]


def update(mixture, measurements, cfg: PhdConfig):
    """Measurement update of the mixture intensity.

    Produces the (1 - p_detect) weighted legacy components followed by one
    Kalman-updated component per (measurement, prior component) pair, with
    weights normalized against clutter intensity plus the detection mass
    of each measurement.
    """
    mixture = list(mixture)
    if not mixture:
        return []
    state_dim = mixture[0].mean.size
    h = _observation_matrix(state_dim)
    legacy = [
        GaussianComponent(
            weight=(1.0 - cfg.p_detect) * c.weight,
            mean=c.mean,
            covariance=c.covariance,
        )
        for c in mixture
    ]
    updated = []
    log_norm = 1.5 * np.log(2.0 * np.pi)
    for z_idx, meas in enumerate(measurements):
        densities = np.empty(len(mixture))
        moments = []
        for i, comp in enumerate(mixture):
            predicted_z = h @ comp.mean
            innovation_cov = symmetrize(h @ comp.covariance @ h.T + meas.covariance)
            try:
                s_inv = psd_inverse(innovation_cov)
            except np.linalg.LinAlgError as err:
                raise np.linalg.LinAlgError(
                    f"singular innovation covariance for measurement {z_idx}, "
                    f"component {i}: {err}"
                )
            gain = comp.covariance @ h.T @ s_inv
            diff = meas.value - predicted_z
            mean = comp.mean + gain @ diff
            cov = symmetrize(comp.covariance - gain @ innovation_cov @ gain.T)
            _, logdet = np.linalg.slogdet(innovation_cov)
            densities[i] = np.exp(-0.5 * diff @ s_inv @ diff - 0.5 * logdet - log_norm)
            moments.append((mean, cov))
        detection_mass = cfg.p_detect * float(
            np.sum(densities * [c.weight for c in mixture])
        )
        denom = cfg.clutter_intensity + detection_mass
        for comp, density, (mean, cov) in zip(mixture, densities, moments):
            weight = 0.0
            if denom > 0:
                weight = cfg.p_detect * comp.weight * density / denom
            updated.append(GaussianComponent(weight=weight, mean=mean, covariance=cov))
    return legacy + updated


def prune_merge(mixture, cfg: PhdConfig):
    """Discard negligible components, merge near-duplicates, cap the count.

    Merging tests the squared Mahalanobis distance in the covariance of
    the heaviest remaining component and moment-matches each group, which
    conserves the merged weight exactly.
    """
    survivors = [
        (i, c) for i, c in enumerate(mixture) if c.weight >= cfg.prune_threshold
    ]
    merged = []
    while survivors:
        pivot_pos = min(
            range(len(survivors)),
            key=lambda j: (-survivors[j][1].weight, survivors[j][0]),
        )
        _, pivot = survivors[pivot_pos]
        inv = psd_inverse(pivot.covariance)
        group, rest = [], []
        for idx, comp in survivors:
            diff = comp.mean - pivot.mean
            if diff @ inv @ diff <= cfg.merge_threshold:
                group.append(comp)
            else:
                rest.append((idx, comp))
        weight = sum(c.weight for c in group)
        mean = sum(c.weight * c.mean for c in group) / weight
        cov = np.zeros_like(pivot.covariance)
        for c in group:
            spread = c.mean - mean
            cov += c.weight * (c.covariance + np.outer(spread, spread))
        merged.append(
            GaussianComponent(weight=weight, mean=mean, covariance=symmetrize(cov / weight))
        )
        survivors = rest
    merged.sort(key=lambda c: -c.weight)
    return merged[: cfg.max_components]


def extract_states(mixture, expected_count: int):
    """Means of the heaviest components, ties broken by insertion order."""
    if expected_count < 0:
        raise ValueError("expected_count must be nonnegative")
    order = sorted(range(len(mixture)), key=lambda i: (-mixture[i].weight, i))
    if expected_count > len(mixture):
        warnings.warn(
            f"requested {expected_count} states but only {len(mixture)} "
            "components are present",
            stacklevel=2,
        )
    states = []
    for i in order[:expected_count]:
        mean = mixture[i].mean
        if mean.size == 3:
            states.append(UeState(position=mean, velocity=np.zeros(3)))
        else:
            states.append(UeState(position=mean[:3], velocity=mean[3:6]))
    return states


def _matrix_sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(symmetrize(matrix))
    if eigvals[0] < -1e-9 * max(eigvals[-1], 1e-300):
        raise ValueError("sigma-point generation requires a PSD covariance")
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def spherical_to_position(ap: ApGeometry, theta, phi, tau) -> np.ndarray:
    """Map local arrival angles and delay to a global position."""
    d = SPEED_OF_LIGHT * tau
    st = np.sin(theta)
    local = d * np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])
    return ap.position + rotation_z(ap.omega) @ local


def measurements_from_angles(
    ap: ApGeometry,
    theta: float,
    phi: float,
    tau: float,
    angle_delay_covariance,
    source_ap: int = PROXY,
) -> PositionMeasurement:
    """Convert an (angle, angle, delay) estimate to a position measurement.

    Symmetric unscented transform with 2n+1 points (n = 3, spread 3) pushes
    the estimate's covariance through the spherical-to-Cartesian map of the
    AP pose; the returned covariance is PSD by construction.
    """
    if tau <= 0:
        raise ValueError("delay must be positive")
    cov = np.asarray(angle_delay_covariance, dtype=float)
    if cov.shape != (3, 3):
        raise ValueError("angle/delay covariance must be 3x3")
    n = 3
    spread = float(n)  # n + offset with the classic offset 3 - n
    mean = np.array([theta, phi, tau], dtype=float)
    root = _matrix_sqrt_psd(spread * cov)
    points = [mean]
    weights = [0.0]
    for axis in range(n):
        points.append(mean + root[:, axis])
        points.append(mean - root[:, axis])
        weights.extend([1.0 / (2.0 * n), 1.0 / (2.0 * n)])
    transformed = np.array(
        [spherical_to_position(ap, p[0], p[1], p[2]) for p in points]
    )
    weights = np.asarray(weights)
    value = weights @ transformed
    centered = transformed - value
    w_cov = np.einsum("k,ki,kj->ij", weights, centered, centered)
    return PositionMeasurement(
        value=value, covariance=symmetrize(w_cov), source_ap=source_ap
    )


def cluster_proxies(measurements, gate_distance: float):
    """Fuse groups of mutually close measurements into proxy measurements.

    Single-linkage grouping on Euclidean distance at `gate_distance`;
    each multi-member group is combined information-form (inverse
    covariances add, means weighted accordingly). Singleton groups pass
    through untouched.
    """
    if gate_distance <= 0:
        raise ValueError("gate distance must be positive")
    measurements = list(measurements)
    m = len(measurements)
    if m == 0:
        return []
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(m):
        for j in range(i + 1, m):
            if (
                np.linalg.norm(measurements[i].value - measurements[j].value)
                <= gate_distance
            ):
                parent[find(i)] = find(j)

    groups = {}
    for i in range(m):
        groups.setdefault(find(i), []).append(i)

    fused = []
    for indices in sorted(groups.values(), key=min):
        if len(indices) == 1:
            fused.append(measurements[indices[0]])
            continue
        info = np.zeros((3, 3))
        info_mean = np.zeros(3)
        for i in indices:
            w_inv = psd_inverse(measurements[i].covariance)
            info += w_inv
            info_mean += w_inv @ measurements[i].value
        cov = psd_inverse(info)
        fused.append(
            PositionMeasurement(
                value=cov @ info_mean, covariance=symmetrize(cov), source_ap=PROXY
            )
        )
    return fused


@dataclass(frozen=True, eq=False)
class KalmanTrack:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        _check_covariance(cov, "track covariance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", symmetrize(cov))


def kalman_baseline_step(tracks, measurements, motion: MotionModel, gate: float):
    """One cycle of the nearest-neighbor Kalman baseline.

    Tracks are predicted, then greedily paired with their nearest in-gate
    measurement by squared Mahalanobis distance (each measurement used at
    most once); unassociated tracks coast on the prediction.
    """
    predicted = []
    f = motion.transition_matrix()
    q = motion.process_noise
    for track in tracks:
        predicted.append(
            KalmanTrack(
                mean=f @ track.mean,
                covariance=symmetrize(f @ track.covariance @ f.T + q),
            )
        )
    if not predicted:
        return []
    state_dim = predicted[0].mean.size
    h = _observation_matrix(state_dim)

    candidates = []
    for t_idx, track in enumerate(predicted):
        for z_idx, meas in enumerate(measurements):
            s = symmetrize(h @ track.covariance @ h.T + meas.covariance)
            diff = meas.value - h @ track.mean
            d2 = float(diff @ psd_inverse(s) @ diff)
            if d2 <= gate:
                candidates.append((d2, t_idx, z_idx))
    candidates.sort()

    assigned_tracks, assigned_meas = set(), set()
    assignment = {}
    for d2, t_idx, z_idx in candidates:
        if t_idx in assigned_tracks or z_idx in assigned_meas:
            continue
        assignment[t_idx] = z_idx
        assigned_tracks.add(t_idx)
        assigned_meas.add(z_idx)

    result = []
    for t_idx, track in enumerate(predicted):
        if t_idx not in assignment:
            result.append(track)
            continue
        meas = measurements[assignment[t_idx]]
        s = symmetrize(h @ track.covariance @ h.T + meas.covariance)
        gain = track.covariance @ h.T @ psd_inverse(s)
        mean = track.mean + gain @ (meas.value - h @ track.mean)
        cov = symmetrize(track.covariance - gain @ s @ gain.T)
        result.append(KalmanTrack(mean=mean, covariance=cov))
    return result


def instantaneous_rmse(estimate, truth) -> float:
    """Euclidean position error between an estimate and the truth."""
    est = estimate.position if isinstance(estimate, UeState) else np.asarray(estimate)
    tru = truth.position if isinstance(truth, UeState) else np.asarray(truth)
    return float(np.linalg.norm(np.asarray(est, float) - np.asarray(tru, float)))
