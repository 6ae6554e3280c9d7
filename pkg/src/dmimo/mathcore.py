"""Shared numerical kernels: seeded random streams, circular statistics,
and symmetric matrix inversion with an explicit conditioning policy.

All tolerances that gate numerical decisions elsewhere in the package are
centralized here so tests can reference a single source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact by definition

# Conditioning policy defaults (overridable per call, never mutated).
CONDITION_LIMIT = 1e12
EIGENVALUE_FLOOR_REL = 1e-12
SYMMETRY_TOL = 1e-10
PSD_TOL_REL = 1e-8


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix is too ill-conditioned to invert reliably.

    Carries the estimated condition number and, when available, the
    eigenvector spanning the (near-)null space, which for position
    information matrices is the unlocalizable direction.
    """

    def __init__(self, message, condition=np.inf, null_direction=None):
        super().__init__(message)
        self.condition = condition
        self.null_direction = null_direction


class SingularGeometryError(ValueError):
    """Raised when a geometry makes azimuth unobservable (boresight poles)."""


@dataclass(frozen=True)
class SeededStream:
    """Counter-based random stream addressed by (master_seed, stream_id).

    Streams are value types: the same pair always yields the same sequence
    (Philox keyed through a SeedSequence with the stream id as spawn key),
    and distinct stream ids are statistically independent. Because draws
    are addressed rather than consumed from shared state, results cannot
    depend on worker scheduling.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.stream_id,)
        )
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *indices: int) -> "SeededStream":
        """Derive a sub-stream from bounded integer indices.

        Packing scheme (documented contract): each index occupies 16 bits,
        most significant first, folded onto the parent id. Indices must be
        in [0, 65535].
        """
        sid = self.stream_id
        for ix in indices:
            if not 0 <= ix < 1 << 16:
                raise ValueError(f"stream index {ix} outside [0, 65535]")
            sid = (sid << 16) | ix
        return SeededStream(self.master_seed, sid)


def bessel_i_ratio(kappa: float) -> float:
    """Ratio of modified Bessel functions I2(kappa)/I0(kappa).

    Computed as 1 - (2/kappa) * I1/I0 using exponentially scaled Bessel
    evaluations (overflow-safe for large kappa), with a series fallback
    kappa^2/8 * (1 - kappa^2/6) / (1 + kappa^2/4) below kappa = 1e-4 where
    the subtraction would cancel catastrophically.
    """
    if kappa < 0:
        raise ValueError("concentration must be nonnegative")
    if np.isinf(kappa):
        return 1.0
    if kappa == 0.0:
        return 0.0
    if kappa < 1e-4:
        t = 0.25 * kappa * kappa
        return (0.5 * t) * (1.0 + t / 3.0) / (1.0 + t)
    r1 = special.ive(1, kappa) / special.ive(0, kappa)
    return 1.0 - 2.0 * r1 / kappa


def sample_von_mises(mu: float, kappa: float, stream: SeededStream, size=None):
    """Draw circular samples with mean direction mu and concentration kappa.

    kappa = 0 degenerates to the uniform distribution on the circle.
    Uses the Best-Fisher rejection sampler via numpy's generator.
    """
    if kappa < 0:
        raise ValueError("concentration must be nonnegative")
    rng = stream.generator()
    return rng.vonmises(mu, kappa, size=size)


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def check_symmetric(matrix: np.ndarray, tol: float = SYMMETRY_TOL, name="matrix"):
    scale = max(np.max(np.abs(matrix)), 1.0)
    if np.max(np.abs(matrix - matrix.T)) > tol * scale:
        raise ValueError(f"{name} is not symmetric within {tol}")


def psd_inverse(
    matrix: np.ndarray, condition_limit: float = CONDITION_LIMIT
) -> np.ndarray:
    """Invert a symmetric positive (semi)definite matrix, or fail loudly.

    Eigendecomposition based; eigenvalues below EIGENVALUE_FLOOR_REL times
    the largest are treated as zero and trigger SingularMatrixError, as does
    an estimated condition number above `condition_limit`. Near-singular
    inputs never produce a silently garbage inverse.
    """
    matrix = np.asarray(matrix, dtype=float)
    check_symmetric(matrix)
    eigvals, eigvecs = np.linalg.eigh(symmetrize(matrix))
    lam_max = eigvals[-1]
    lam_min = eigvals[0]
    if lam_max <= 0.0:
        raise SingularMatrixError(
            "matrix has no positive eigenvalues",
            condition=np.inf,
            null_direction=eigvecs[:, 0],
        )
    floor = lam_max * EIGENVALUE_FLOOR_REL
    condition = np.inf if lam_min <= floor else lam_max / lam_min
    if condition > condition_limit:
        raise SingularMatrixError(
            f"condition number {condition:.3e} exceeds limit {condition_limit:.1e}",
            condition=condition,
            null_direction=eigvecs[:, 0],
        )
    return (eigvecs / eigvals) @ eigvecs.T


def rotation_z(omega: float) -> np.ndarray:
    """Counterclockwise rotation about the z axis by omega radians."""
    c, s = np.cos(omega), np.sin(omega)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
