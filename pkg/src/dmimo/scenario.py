"""Scenario configuration, synthesis, experiment drivers, and persistence.

A scenario is declared in a single TOML document (grammar in
docs/config.md): AP poses and antenna sources, user states and antennas,
the transmit spectrum and target receive SNR, the surveillance region,
filter and scheduler settings, and one master seed. Everything downstream
is derived deterministically from that document: every random draw comes
from a counter-addressed stream keyed by what the draw is for, so results
are reproducible byte-for-byte regardless of evaluation order or worker
count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import tomli

from . import tracking as trk
from .apselect import (
    SelectionProblem,
    brute_force_select,
    greedy_select,
    local_search,
)
from .eadf import (
    build_eadf,
    load_pattern,
    normalize_eadf,
    perturb_pattern,
    synthesize_ideal_upa,
)
from .estimator import PositioningScenario
from .fim import (
    ApGeometry,
    crlb_xi,
    fim_theta,
    global_fim,
    local_fim_exact,
    los_geometry,
    peb,
)
from .mathcore import (
    SPEED_OF_LIGHT,
    SeededStream,
    SingularGeometryError,
    SingularMatrixError,
    rotation_z,
)
from .signal_model import (
    LosParams,
    SignalSpec,
    UeAntenna,
    free_space_gain,
    los_signal,
)
from .tracking import (
    GaussianComponent,
    MotionModel,
    PhdConfig,
    PositionMeasurement,
    UeState,
    cluster_proxies,
    extract_states,
    instantaneous_rmse,
    measurements_from_angles,
    predict,
    prune_merge,
    update,
)

# Stream address kinds (first index of every derived stream).
KIND_TRUTH = 1
KIND_DETECT = 2
KIND_MEASURE = 3
KIND_CLUTTER = 4
KIND_PERTURB = 5
KIND_MONTE_CARLO = 6

SCHEDULE_METHODS = ("all", "greedy", "brute", "fixed")
EADF_SOURCES = ("ideal", "perturbed", "file")
MOTION_KINDS = (trk.RANDOM_WALK, trk.CONSTANT_VELOCITY)


class ConfigError(ValueError):
    """Configuration problem, carrying the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ApConfig:
    position: list
    omega_deg: float = 0.0
    eadf: str = "ideal"
    rows: int = 2
    cols: int = 4
    spacing_wavelengths: float = 0.5
    pattern_samples: int = 16
    pattern_file: str | None = None
    perturb_seed: int | None = None


@dataclass
class UeConfig:
    position: list
    velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    c_tv: list = field(default_factory=lambda: [1.0, 0.0])
    c_th: list = field(default_factory=lambda: [0.0, 0.0])
    beta_deg: float = 0.0
    tilt_mu_deg: float | None = None
    tilt_kappa: float | None = None


@dataclass
class SignalConfig:
    carrier_hz: float = 5.6e9
    n_freq: int = 16
    bandwidth_hz: float = 400e6
    snr_db: float = 25.0


@dataclass
class TruthConfig:
    motion: str = trk.CONSTANT_VELOCITY
    noise_std: float = 0.0
    reflect_at_bounds: bool = True


@dataclass
class TrackingConfig:
    motion: str = trk.RANDOM_WALK
    process_noise_std: float = 0.1
    dt: float = 1.0
    steps: int = 100
    p_detect: float = 0.95
    clutter_per_volume: float = 0.0
    prune_threshold: float = 1e-4
    merge_threshold: float = 4.0
    max_components: int = 500
    birth_weight: float = 1e-2
    birth_std: float = 1.0
    measurement_inflation: float = 1.0
    proxy_gate_m: float = 1.0


@dataclass
class ScheduleConfig:
    method: str = "all"
    k_prime: int | None = None
    fixed: list = field(default_factory=list)


@dataclass
class ScenarioConfig:
    aps: list
    ues: list
    signal: SignalConfig
    box_min: list
    box_max: list
    truth: TruthConfig
    tracking: TrackingConfig
    schedule: ScheduleConfig
    master_seed: int


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"{path}.{key}", "missing required key")
    return table[key]


def _vector(value, path: str, length: int) -> list:
    if not isinstance(value, list) or len(value) != length:
        raise ConfigError(path, f"expected a list of {length} numbers")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(path, "entries must be numbers")


def _build_section(cls, table: dict, path: str):
    known = {f for f in cls.__dataclass_fields__}
    for key in table:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown key")
    return cls(**table)


def load_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document; report precise errors.

    Parse failures carry the line/column from the TOML reader; semantic
    failures carry the dotted field path.
    """
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as err:
        raise ConfigError("<document>", f"parse error: {err}")

    known_tables = {
        "aps", "ues", "signal", "region", "truth", "tracking", "schedule", "seeds",
    }
    for key in raw:
        if key not in known_tables:
            raise ConfigError(key, "unknown section")

    aps_raw = raw.get("aps", [])
    if not isinstance(aps_raw, list) or not aps_raw:
        raise ConfigError("aps", "need at least one AP")
    aps = []
    for i, entry in enumerate(aps_raw):
        path = f"aps[{i}]"
        position = _vector(_require(entry, "position", path), f"{path}.position", 3)
        ap = _build_section(ApConfig, entry, path)
        ap.position = position
        if ap.eadf not in EADF_SOURCES:
            raise ConfigError(f"{path}.eadf", f"must be one of {EADF_SOURCES}")
        if ap.eadf == "file" and not ap.pattern_file:
            raise ConfigError(f"{path}.pattern_file", "required when eadf = 'file'")
        if ap.rows < 1 or ap.cols < 1:
            raise ConfigError(f"{path}.rows", "array must have at least one element")
        if ap.spacing_wavelengths <= 0:
            raise ConfigError(f"{path}.spacing_wavelengths", "must be positive")
        if ap.pattern_samples < 4 or ap.pattern_samples % 2:
            raise ConfigError(f"{path}.pattern_samples", "must be an even integer >= 4")
        aps.append(ap)

    ues_raw = raw.get("ues", [])
    if not isinstance(ues_raw, list) or not ues_raw:
        raise ConfigError("ues", "need at least one UE")
    ues = []
    for i, entry in enumerate(ues_raw):
        path = f"ues[{i}]"
        position = _vector(_require(entry, "position", path), f"{path}.position", 3)
        ue = _build_section(UeConfig, entry, path)
        ue.position = position
        ue.velocity = _vector(ue.velocity, f"{path}.velocity", 3)
        ue.c_tv = _vector(ue.c_tv, f"{path}.c_tv", 2)
        ue.c_th = _vector(ue.c_th, f"{path}.c_th", 2)
        if ue.c_tv == [0.0, 0.0] and ue.c_th == [0.0, 0.0]:
            raise ConfigError(f"{path}.c_tv", "antenna gains cannot both be zero")
        if (ue.tilt_kappa is None) != (ue.tilt_mu_deg is None):
            raise ConfigError(
                f"{path}.tilt_kappa", "tilt prior needs both mean and concentration"
            )
        if ue.tilt_kappa is not None and ue.tilt_kappa < 0:
            raise ConfigError(f"{path}.tilt_kappa", "must be nonnegative")
        ues.append(ue)

    signal = _build_section(SignalConfig, raw.get("signal", {}), "signal")
    if signal.n_freq < 1:
        raise ConfigError("signal.n_freq", "must be positive")
    if signal.bandwidth_hz <= 0 and signal.n_freq > 1:
        raise ConfigError("signal.bandwidth_hz", "must be positive")

    region = raw.get("region", {})
    box_min = _vector(_require(region, "box_min", "region"), "region.box_min", 3)
    box_max = _vector(_require(region, "box_max", "region"), "region.box_max", 3)
    if not all(hi > lo for lo, hi in zip(box_min, box_max)):
        raise ConfigError("region.box_max", "box must have positive extent")

    truth = _build_section(TruthConfig, raw.get("truth", {}), "truth")
    if truth.motion not in MOTION_KINDS:
        raise ConfigError("truth.motion", f"must be one of {MOTION_KINDS}")
    if truth.noise_std < 0:
        raise ConfigError("truth.noise_std", "must be nonnegative")

    track = _build_section(TrackingConfig, raw.get("tracking", {}), "tracking")
    if track.motion not in MOTION_KINDS:
        raise ConfigError("tracking.motion", f"must be one of {MOTION_KINDS}")
    for key in ("process_noise_std", "dt", "prune_threshold", "merge_threshold",
                "proxy_gate_m"):
        if getattr(track, key) <= 0:
            raise ConfigError(f"tracking.{key}", "must be positive")
    if not 0.0 <= track.p_detect <= 1.0:
        raise ConfigError("tracking.p_detect", "must lie in [0, 1]")
    if track.clutter_per_volume < 0:
        raise ConfigError("tracking.clutter_per_volume", "must be nonnegative")
    if track.steps < 1:
        raise ConfigError("tracking.steps", "must be positive")
    if track.max_components < 1:
        raise ConfigError("tracking.max_components", "must be positive")

    schedule = _build_section(ScheduleConfig, raw.get("schedule", {}), "schedule")
    if schedule.method not in SCHEDULE_METHODS:
        raise ConfigError("schedule.method", f"must be one of {SCHEDULE_METHODS}")
    if schedule.k_prime is None:
        schedule.k_prime = len(aps)
    if not 1 <= schedule.k_prime <= len(aps):
        raise ConfigError("schedule.k_prime", "must lie in [1, number of APs]")
    schedule.fixed = [int(v) for v in schedule.fixed]
    if schedule.method == "fixed":
        if not schedule.fixed:
            raise ConfigError("schedule.fixed", "required when method = 'fixed'")
        for v in schedule.fixed:
            if not 0 <= v < len(aps):
                raise ConfigError("schedule.fixed", f"AP index {v} out of range")

    seeds = raw.get("seeds", {})
    master_seed = int(seeds.get("master", 0))

    return ScenarioConfig(
        aps=aps,
        ues=ues,
        signal=signal,
        box_min=box_min,
        box_max=box_max,
        truth=truth,
        tracking=track,
        schedule=schedule,
        master_seed=master_seed,
    )


def load_config_file(path) -> ScenarioConfig:
    import os

    with open(path, "r", encoding="utf-8") as fh:
        cfg = load_config(fh.read())
    override = os.environ.get("DMIMO_SEED")
    if override is not None:
        cfg.master_seed = int(override)
    return cfg


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int,)):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value)}")


def serialize_config(cfg: ScenarioConfig) -> str:
    """Emit the TOML document for a config; load(serialize(c)) == c."""
    lines: list[str] = []

    def emit_table(name: str, data: dict):
        lines.append(f"[{name}]")
        for key, value in data.items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")

    def emit_array_table(name: str, data: dict):
        lines.append(f"[[{name}]]")
        for key, value in data.items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")

    emit_table("signal", asdict(cfg.signal))
    emit_table("region", {"box_min": cfg.box_min, "box_max": cfg.box_max})
    for ap in cfg.aps:
        emit_array_table("aps", asdict(ap))
    for ue in cfg.ues:
        emit_array_table("ues", asdict(ue))
    emit_table("truth", asdict(cfg.truth))
    emit_table("tracking", asdict(cfg.tracking))
    emit_table("schedule", asdict(cfg.schedule))
    emit_table("seeds", {"master": cfg.master_seed})
    return "\n".join(lines)


@dataclass(eq=False)
class RuntimeScenario:
    """Config resolved into numeric objects ready for simulation."""

    cfg: ScenarioConfig
    models: list
    geometry: list
    ue_antennas: list
    spec: SignalSpec
    filter_motion: MotionModel
    phd: PhdConfig
    wavelength: float
    box_min: np.ndarray
    box_max: np.ndarray
    master: SeededStream

    def __post_init__(self):
        self._cov_cache: dict = {}

    @property
    def n_aps(self) -> int:
        return len(self.geometry)

    @property
    def n_ues(self) -> int:
        return len(self.cfg.ues)

    @property
    def box_volume(self) -> float:
        return float(np.prod(self.box_max - self.box_min))

    def link_params(self, ap_index: int, position) -> LosParams:
        theta, phi, tau = los_geometry(self.geometry[ap_index], position)
        gain = free_space_gain(
            self.wavelength, self.geometry[ap_index].position, position
        )
        return LosParams(theta=theta, phi=phi, tau=tau, alpha_vv=gain, alpha_hh=gain)

    def measurement_covariance(
        self, ap_index: int, ue_index: int, position
    ) -> np.ndarray:
        """Angle/delay covariance of a detection: the link's parameter
        CRLB at the true geometry, scaled by the configured inflation."""
        key = (ap_index, ue_index, np.asarray(position, float).tobytes())
        cached = self._cov_cache.get(key)
        if cached is not None:
            return cached
        params = self.link_params(ap_index, position)
        fim = fim_theta(
            self.models[ap_index], params, self.ue_antennas[ue_index], self.spec
        )
        cov = self.cfg.tracking.measurement_inflation * crlb_xi(fim)
        if len(self._cov_cache) > 4096:
            self._cov_cache.clear()
        self._cov_cache[key] = cov
        return cov

    def ap_position_fim(self, ap_index: int, ue_index: int, position) -> np.ndarray:
        """Global-frame 3x3 position information of one AP at a position."""
        params = self.link_params(ap_index, position)
        fim = fim_theta(
            self.models[ap_index], params, self.ue_antennas[ue_index], self.spec
        )
        local = local_fim_exact(fim, params)
        rot = rotation_z(self.geometry[ap_index].omega)
        return rot @ local.matrix @ rot.T


def _build_model(ap: ApConfig, index: int, master: SeededStream, n_freq: int):
    if ap.eadf == "file":
        pattern = load_pattern(ap.pattern_file)
    else:
        pattern = synthesize_ideal_upa(
            ap.rows,
            ap.cols,
            ap.spacing_wavelengths,
            ap.pattern_samples,
            ap.pattern_samples,
        )
        if ap.eadf == "perturbed":
            if ap.perturb_seed is not None:
                stream = SeededStream(ap.perturb_seed)
            else:
                stream = master.child(KIND_PERTURB, index)
            pattern = perturb_pattern(pattern, stream)
    return normalize_eadf(build_eadf(pattern), frequency_count=n_freq)


def build_runtime(cfg: ScenarioConfig) -> RuntimeScenario:
    """Resolve a config into models, geometry, and derived noise level.

    The noise variance realizes the configured receive SNR as the mean
    per-sample signal power across APs seen from the first UE's initial
    position, which pins the whole scenario's absolute scale.
    """
    master = SeededStream(cfg.master_seed)
    geometry = [
        ApGeometry(position=np.array(ap.position), omega=math.radians(ap.omega_deg))
        for ap in cfg.aps
    ]
    models = [
        _build_model(ap, i, master, cfg.signal.n_freq)
        for i, ap in enumerate(cfg.aps)
    ]
    ue_antennas = [
        UeAntenna(
            c_tv=complex(ue.c_tv[0], ue.c_tv[1]),
            c_th=complex(ue.c_th[0], ue.c_th[1]),
            beta=math.radians(ue.beta_deg),
        )
        for ue in cfg.ues
    ]
    if cfg.signal.n_freq == 1:
        freqs = np.array([0.0])
    else:
        freqs = np.linspace(
            -cfg.signal.bandwidth_hz / 2.0,
            cfg.signal.bandwidth_hz / 2.0,
            cfg.signal.n_freq,
        )
    amps = np.ones(cfg.signal.n_freq)
    probe = SignalSpec(freqs, amps, 1.0)
    wavelength = SPEED_OF_LIGHT / cfg.signal.carrier_hz

    ref_pos = np.array(cfg.ues[0].position)
    total = 0.0
    for k, geom in enumerate(geometry):
        theta, phi, tau = los_geometry(geom, ref_pos)
        gain = free_space_gain(wavelength, geom.position, ref_pos)
        params = LosParams(theta=theta, phi=phi, tau=tau, alpha_vv=gain, alpha_hh=gain)
        d = los_signal(models[k], params, ue_antennas[0], probe)
        total += float(np.sum(np.abs(d) ** 2)) / d.size
    mean_energy = total / len(geometry)
    noise_variance = mean_energy / 10.0 ** (cfg.signal.snr_db / 10.0)
    spec = SignalSpec(freqs, amps, noise_variance)

    track = cfg.tracking
    state_dim = 3 if track.motion == trk.RANDOM_WALK else 6
    q = np.zeros((state_dim, state_dim))
    q[:3, :3] = track.process_noise_std**2 * np.eye(3)
    filter_motion = MotionModel(kind=track.motion, process_noise=q, dt=track.dt)

    births = []
    for ue in cfg.ues:
        mean = np.array(ue.position, dtype=float)
        if state_dim == 6:
            mean = np.concatenate([mean, np.zeros(3)])
        births.append(
            GaussianComponent(
                weight=track.birth_weight,
                mean=mean,
                covariance=track.birth_std**2 * np.eye(state_dim),
            )
        )
    phd = PhdConfig(
        p_detect=track.p_detect,
        clutter_intensity=track.clutter_per_volume,
        prune_threshold=track.prune_threshold,
        merge_threshold=track.merge_threshold,
        max_components=track.max_components,
        birth=tuple(births),
    )
    return RuntimeScenario(
        cfg=cfg,
        models=models,
        geometry=geometry,
        ue_antennas=ue_antennas,
        spec=spec,
        filter_motion=filter_motion,
        phd=phd,
        wavelength=wavelength,
        box_min=np.array(cfg.box_min),
        box_max=np.array(cfg.box_max),
        master=master,
    )


def _reflect(position: np.ndarray, velocity, box_min, box_max):
    """Fold a position back into the box, flipping velocity on each bounce."""
    pos = position.copy()
    vel = velocity.copy() if velocity is not None else None
    for axis in range(3):
        lo, hi = box_min[axis], box_max[axis]
        span = hi - lo
        for _ in range(64):
            if pos[axis] < lo:
                pos[axis] = 2 * lo - pos[axis]
            elif pos[axis] > hi:
                pos[axis] = 2 * hi - pos[axis]
            else:
                break
            if vel is not None:
                vel[axis] = -vel[axis]
            if span <= 0:
                break
    return pos, vel


def simulate_trajectory(
    motion: MotionModel,
    steps: int,
    stream: SeededStream,
    start: UeState,
    box_min=None,
    box_max=None,
    noise_std: float | None = None,
) -> list:
    """Sample a state path under the transition model, optionally reflected.

    The first entry is the start state. Process noise comes from `motion`
    unless `noise_std` overrides it with an isotropic position noise.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    rng = stream.generator()
    reflect = box_min is not None and box_max is not None
    position = np.asarray(start.position, dtype=float).copy()
    velocity = np.asarray(start.velocity, dtype=float).copy()
    states = [UeState(position=position.copy(), velocity=velocity.copy())]
    if noise_std is None:
        q_pos = motion.process_noise[:3, :3]
    else:
        q_pos = noise_std**2 * np.eye(3)
    if q_pos.any():
        chol = np.linalg.cholesky(q_pos + 1e-300 * np.eye(3))
    else:
        chol = np.zeros((3, 3))
    for _ in range(steps - 1):
        noise = chol @ rng.standard_normal(3)
        if motion.kind == trk.CONSTANT_VELOCITY:
            position = position + velocity * motion.dt + noise
        else:
            position = position + noise
        if reflect:
            position, velocity = _reflect(position, velocity, box_min, box_max)
        states.append(UeState(position=position.copy(), velocity=velocity.copy()))
    return states


def synthesize_measurements(
    runtime: RuntimeScenario, truths: list, active: list, step: int
) -> list:
    """Detections and clutter for one time step, in position domain.

    Per (UE, active AP): a Bernoulli(p_detect) draw decides detection;
    detected links perturb the true angles/delay with their CRLB-scaled
    covariance and convert through the unscented transform. Clutter is a
    Poisson(intensity * volume) number of uniform points in the box, each
    attributed to an active AP and given that AP's estimation covariance.
    """
    measurements: list[PositionMeasurement] = []
    track = runtime.cfg.tracking
    for m, truth in enumerate(truths):
        for k in active:
            u = runtime.master.child(KIND_DETECT, m, k, step).generator().uniform()
            if u >= track.p_detect:
                continue
            theta, phi, tau = los_geometry(runtime.geometry[k], truth.position)
            cov = runtime.measurement_covariance(k, m, truth.position)
            noise_rng = runtime.master.child(KIND_MEASURE, m, k, step).generator()
            delta = noise_rng.multivariate_normal(np.zeros(3), cov)
            measurements.append(
                measurements_from_angles(
                    runtime.geometry[k],
                    theta + delta[0],
                    phi + delta[1],
                    tau + delta[2],
                    cov,
                    source_ap=k,
                )
            )
    lam = track.clutter_per_volume * runtime.box_volume
    if lam > 0 and active:
        rng = runtime.master.child(KIND_CLUTTER, 0, 0, step).generator()
        count = int(rng.poisson(lam))
        for _ in range(count):
            point = rng.uniform(runtime.box_min, runtime.box_max)
            k = int(active[rng.integers(len(active))])
            theta, phi, tau = los_geometry(runtime.geometry[k], point)
            cov = runtime.measurement_covariance(k, 0, point)
            measurements.append(
                measurements_from_angles(
                    runtime.geometry[k], theta, phi, tau, cov, source_ap=k
                )
            )
    return measurements


def _selection_problem(runtime: RuntimeScenario, positions: list) -> SelectionProblem:
    fims = np.zeros((len(positions), runtime.n_aps, 3, 3))
    for m, pos in enumerate(positions):
        for k in range(runtime.n_aps):
            ue_index = min(m, runtime.n_ues - 1)
            try:
                fims[m, k] = runtime.ap_position_fim(k, ue_index, pos)
            except (ValueError, SingularGeometryError, SingularMatrixError):
                # a candidate position on the AP's axis (or the AP itself)
                # contributes no usable information to the selection
                fims[m, k] = 0.0
    return SelectionProblem(fims=fims)


def select_active_aps(
    runtime: RuntimeScenario, predicted_positions: list
) -> list:
    """Active AP indices for the next step, per the configured policy."""
    schedule = runtime.cfg.schedule
    k = runtime.n_aps
    if schedule.method == "all":
        return list(range(k))
    if schedule.method == "fixed":
        return sorted(set(schedule.fixed))
    if not predicted_positions:
        return list(range(k))
    problem = _selection_problem(runtime, predicted_positions)
    if schedule.method == "brute":
        chosen = brute_force_select(schedule.k_prime, problem)
    else:
        chosen = local_search(greedy_select(schedule.k_prime, problem), problem)
    return list(chosen.active_indices)


@dataclass(eq=False)
class EpisodeLog:
    """Per-step record of one tracking episode."""

    truth: np.ndarray  # (steps, n_ues, 3)
    estimates: np.ndarray  # (steps, n_ues, 3), NaN where missing
    rmse: np.ndarray  # (steps, n_ues)
    active: np.ndarray  # (steps, n_aps) bool
    n_components: np.ndarray  # (steps,)
    cardinality_error: np.ndarray  # (steps,)

    @property
    def steps(self) -> int:
        return self.truth.shape[0]

    @property
    def n_ues(self) -> int:
        return self.truth.shape[1]

    @property
    def n_aps(self) -> int:
        return self.active.shape[1]


def _pair_estimates(estimates: list, truths: list):
    """Greedy nearest pairing of extracted estimates to true users."""
    pairs = {}
    used = set()
    candidates = []
    for m, truth in enumerate(truths):
        for e, est in enumerate(estimates):
            candidates.append(
                (instantaneous_rmse(est, truth), m, e)
            )
    candidates.sort()
    for dist, m, e in candidates:
        if m in pairs or e in used:
            continue
        pairs[m] = e
        used.add(e)
    return pairs


def run_tracking_episode(cfg: ScenarioConfig) -> EpisodeLog:
    """Drive the full per-step loop and log everything.

    Step order: predict (plus birth), schedule from the predicted states,
    synthesize measurements from the active APs, cluster into proxies,
    update, prune/merge, extract. Deterministic for a given config.
    """
    runtime = build_runtime(cfg)
    steps = cfg.tracking.steps
    n_ues = runtime.n_ues
    n_aps = runtime.n_aps

    truths_per_ue = []
    for m, ue in enumerate(cfg.ues):
        start = UeState(position=np.array(ue.position), velocity=np.array(ue.velocity))
        truth_motion = MotionModel(
            kind=cfg.truth.motion,
            process_noise=cfg.truth.noise_std**2 * np.eye(
                3 if cfg.truth.motion == trk.RANDOM_WALK else 6
            ),
            dt=cfg.tracking.dt,
        )
        box = (runtime.box_min, runtime.box_max) if cfg.truth.reflect_at_bounds else (None, None)
        truths_per_ue.append(
            simulate_trajectory(
                truth_motion,
                steps,
                runtime.master.child(KIND_TRUTH, m),
                start,
                box_min=box[0],
                box_max=box[1],
                noise_std=cfg.truth.noise_std,
            )
        )

    log = EpisodeLog(
        truth=np.zeros((steps, n_ues, 3)),
        estimates=np.full((steps, n_ues, 3), np.nan),
        rmse=np.full((steps, n_ues), np.nan),
        active=np.zeros((steps, n_aps), dtype=bool),
        n_components=np.zeros(steps, dtype=int),
        cardinality_error=np.zeros(steps),
    )

    mixture: list[GaussianComponent] = []
    for t in range(steps):
        truths = [truths_per_ue[m][t] for m in range(n_ues)]
        predicted = predict(mixture, runtime.filter_motion) + list(runtime.phd.birth)
        predicted_states = extract_states(predicted, min(n_ues, len(predicted)))
        active = select_active_aps(
            runtime, [s.position for s in predicted_states]
        )
        measurements = synthesize_measurements(runtime, truths, active, t)
        proxies = cluster_proxies(measurements, cfg.tracking.proxy_gate_m)
        mixture = prune_merge(update(predicted, proxies, runtime.phd), runtime.phd)
        estimates = extract_states(mixture, min(n_ues, len(mixture)))
        pairs = _pair_estimates(estimates, truths)

        for m in range(n_ues):
            log.truth[t, m] = truths[m].position
            if m in pairs:
                est = estimates[pairs[m]]
                log.estimates[t, m] = est.position
                log.rmse[t, m] = instantaneous_rmse(est, truths[m])
        log.active[t, active] = True
        log.n_components[t] = len(mixture)
        log.cardinality_error[t] = abs(
            sum(c.weight for c in mixture) - n_ues
        )
    return log


@dataclass(eq=False)
class PebMap:
    """Bound evaluated on a planar grid at a fixed height."""

    xs: np.ndarray
    ys: np.ndarray
    z: float
    values: np.ndarray  # (nx, ny), +inf where unlocalizable


def run_peb_map(
    cfg: ScenarioConfig, nx: int, ny: int, z: float | None = None, active=None
) -> PebMap:
    """Evaluate the positioning bound on a grid of candidate UE positions.

    Grid points are cell centers of an nx-by-ny partition of the box at
    height z (the first UE's height by default). Cells whose joint
    information is singular, or which sit on an AP's vertical axis, get
    +inf per the fail-fast conditioning policy.
    """
    runtime = build_runtime(cfg)
    if z is None:
        z = float(cfg.ues[0].position[2])
    if active is None:
        active = list(range(runtime.n_aps))
    xs = runtime.box_min[0] + (np.arange(nx) + 0.5) * (
        runtime.box_max[0] - runtime.box_min[0]
    ) / nx
    ys = runtime.box_min[1] + (np.arange(ny) + 0.5) * (
        runtime.box_max[1] - runtime.box_min[1]
    ) / ny
    values = np.full((nx, ny), np.inf)
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            pos = np.array([x, y, z])
            try:
                contributions = []
                for k in active:
                    params = runtime.link_params(k, pos)
                    fim = fim_theta(
                        runtime.models[k], params, runtime.ue_antennas[0], runtime.spec
                    )
                    contributions.append(
                        (local_fim_exact(fim, params), runtime.geometry[k])
                    )
                values[i, j] = peb(global_fim(contributions))
            except (SingularMatrixError, SingularGeometryError):
                values[i, j] = np.inf
    return PebMap(xs=xs, ys=ys, z=z, values=values)


def positioning_scenario(
    runtime: RuntimeScenario, ue_index: int = 0
) -> PositioningScenario:
    """One-shot positioning view of a scenario at a UE's initial position."""
    return PositioningScenario(
        models=tuple(runtime.models),
        geometry=tuple(runtime.geometry),
        ue_position=np.array(runtime.cfg.ues[ue_index].position),
        ue_antenna=runtime.ue_antennas[ue_index],
        frequencies=runtime.spec.frequencies,
        amplitudes=runtime.spec.amplitudes,
        wavelength=runtime.wavelength,
    )


def _fmt(value: float) -> str:
    return repr(float(value))


TRACK_COLUMNS = (
    "t,ue_id,est_x,est_y,est_z,true_x,true_y,true_z,rmse,n_components"
)
ACTIVATION_COLUMNS = "t,ap_id,active"
PEB_MAP_COLUMNS = "ix,iy,x,y,peb"
MONTE_CARLO_COLUMNS = "snr_db,rmse,peb,trials"


def track_log_csv(log: EpisodeLog) -> str:
    lines = [TRACK_COLUMNS]
    for t in range(log.steps):
        for m in range(log.n_ues):
            est = log.estimates[t, m]
            tru = log.truth[t, m]
            lines.append(
                ",".join(
                    [str(t), str(m)]
                    + [_fmt(v) for v in est]
                    + [_fmt(v) for v in tru]
                    + [_fmt(log.rmse[t, m]), str(int(log.n_components[t]))]
                )
            )
    return "\n".join(lines) + "\n"


def activation_csv(log: EpisodeLog) -> str:
    lines = [ACTIVATION_COLUMNS]
    for t in range(log.steps):
        for k in range(log.n_aps):
            lines.append(f"{t},{k},{int(log.active[t, k])}")
    return "\n".join(lines) + "\n"


def peb_map_csv(grid: PebMap) -> str:
    lines = [PEB_MAP_COLUMNS]
    for i, x in enumerate(grid.xs):
        for j, y in enumerate(grid.ys):
            lines.append(
                f"{i},{j},{_fmt(x)},{_fmt(y)},{_fmt(grid.values[i, j])}"
            )
    return "\n".join(lines) + "\n"


def monte_carlo_csv(reports) -> str:
    lines = [MONTE_CARLO_COLUMNS]
    for report in reports:
        lines.append(
            f"{_fmt(report.snr_db)},{_fmt(report.rmse)},"
            f"{_fmt(report.peb)},{report.trials}"
        )
    return "\n".join(lines) + "\n"


def export_csv(obj, path) -> None:
    """Write a log, map, or report list as CSV; IO failures name the path."""
    if isinstance(obj, EpisodeLog):
        text = track_log_csv(obj)
    elif isinstance(obj, PebMap):
        text = peb_map_csv(obj)
    elif isinstance(obj, (list, tuple)):
        text = monte_carlo_csv(obj)
    else:
        raise TypeError(f"cannot export {type(obj)} as CSV")
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    except OSError as err:
        raise OSError(f"failed writing {path}: {err}") from err


def export_summary(log: EpisodeLog) -> str:
    """Human-readable episode summary with the headline statistics."""
    rmse = log.rmse[np.isfinite(log.rmse)]
    mean_rmse = float(np.mean(rmse)) if rmse.size else float("nan")
    max_rmse = float(np.max(rmse)) if rmse.size else float("nan")
    lines = [
        f"steps: {log.steps}",
        f"users: {log.n_ues}",
        f"mean rmse: {_fmt(mean_rmse)}",
        f"max rmse: {_fmt(max_rmse)}",
        f"mean cardinality error: {_fmt(float(np.mean(log.cardinality_error)))}",
        f"mean active aps: {_fmt(float(np.mean(np.sum(log.active, axis=1))))}",
        f"mean components: {_fmt(float(np.mean(log.n_components)))}",
    ]
    return "\n".join(lines) + "\n"
