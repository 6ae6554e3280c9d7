"""Golden fixtures: regenerate deterministic artifacts and compare.

Each fixture in fixtures/manifest.toml names a scenario config, the
expected artifact beside it, a tolerance class, and the CLI command that
regenerates it. Classes:

  bit-exact     byte-for-byte CSV equality (determinism contract)
  numeric-1e-8  per-cell absolute difference below 1e-8
  statistical   summary statistics inside stored [lo, hi] bands

Verification recomputes the artifact from the config and reports the
first divergence on failure.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import tomli

from .estimator import MlConfig, run_monte_carlo
from .scenario import (
    activation_csv,
    build_runtime,
    load_config_file,
    peb_map_csv,
    positioning_scenario,
    run_peb_map,
    run_tracking_episode,
    track_log_csv,
)

TOLERANCE_CLASSES = ("bit-exact", "numeric-1e-8", "statistical")
NUMERIC_TOL = 1e-8


@dataclass(frozen=True)
class GoldenFixture:
    name: str
    kind: str  # track-csv | activation-csv | peb-map | track-stats | mc-stats
    config: str
    expected: str
    tolerance_class: str
    command: str
    grid: tuple = ()
    snr_db: tuple = ()
    trials: int = 0
    bands: tuple = ()  # ((metric, lo, hi), ...)

    def __post_init__(self):
        if self.tolerance_class not in TOLERANCE_CLASSES:
            raise ValueError(f"unknown tolerance class {self.tolerance_class!r}")


@dataclass(frozen=True)
class FixtureReport:
    name: str
    passed: bool
    message: str


def load_manifest(root: str) -> list:
    """Read fixtures/manifest.toml relative to the repository root."""
    path = os.path.join(root, "fixtures", "manifest.toml")
    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    fixtures = []
    for entry in raw.get("fixture", []):
        fixtures.append(
            GoldenFixture(
                name=entry["name"],
                kind=entry["kind"],
                config=entry["config"],
                expected=entry["expected"],
                tolerance_class=entry["tolerance_class"],
                command=entry["command"],
                grid=tuple(entry.get("grid", ())),
                snr_db=tuple(entry.get("snr_db", ())),
                trials=int(entry.get("trials", 0)),
                bands=tuple(
                    (b["metric"], float(b["lo"]), float(b["hi"]))
                    for b in entry.get("band", [])
                ),
            )
        )
    return fixtures


def regenerate(fixture: GoldenFixture, root: str) -> str:
    """Produce the fixture's artifact text from its config."""
    cfg = load_config_file(os.path.join(root, fixture.config))
    if fixture.kind == "track-csv":
        return track_log_csv(run_tracking_episode(cfg))
    if fixture.kind == "activation-csv":
        return activation_csv(run_tracking_episode(cfg))
    if fixture.kind == "peb-map":
        nx, ny = fixture.grid
        return peb_map_csv(run_peb_map(cfg, nx, ny))
    if fixture.kind == "track-stats":
        log = run_tracking_episode(cfg)
        import numpy as np

        rmse = log.rmse[np.isfinite(log.rmse)]
        stats = {
            "mean_rmse": float(np.mean(rmse)),
            "max_rmse": float(np.max(rmse)),
            "mean_cardinality_error": float(np.mean(log.cardinality_error)),
        }
        return _stat_lines(stats)
    if fixture.kind == "mc-stats":
        runtime = build_runtime(cfg)
        scn = positioning_scenario(runtime)
        config = MlConfig(
            grid_extent=(runtime.box_max - runtime.box_min),
            coarse_step=0.3,
            grid_center=0.5 * (runtime.box_min + runtime.box_max),
        )
        reports = run_monte_carlo(
            scn, list(fixture.snr_db), fixture.trials, cfg.master_seed, config
        )
        stats = {}
        for report in reports:
            tag = f"{report.snr_db:g}".replace(".", "p").replace("-", "m")
            stats[f"rmse_{tag}"] = report.rmse
            stats[f"peb_{tag}"] = report.peb
            stats[f"ratio_{tag}"] = report.rmse / report.peb
        return _stat_lines(stats)
    if fixture.kind == "eadf-gap":
        return _stat_lines(eadf_gap_stats(cfg))
    raise ValueError(f"unknown fixture kind {fixture.kind!r}")


def _stat_lines(stats: dict) -> str:
    return "\n".join(f"{k} = {v!r}" for k, v in sorted(stats.items())) + "\n"


def eadf_gap_stats(cfg) -> dict:
    """Bound gap between the ideal array and its imperfection-perturbed
    twin on the same geometry and noise level."""
    import copy

    import numpy as np

    from .fim import fim_theta, global_fim, local_fim_exact, peb

    runtime_ideal = build_runtime(cfg)
    cfg_perturbed = copy.deepcopy(cfg)
    for ap in cfg_perturbed.aps:
        ap.eadf = "perturbed"
    runtime_perturbed = build_runtime(cfg_perturbed)
    # hold the noise level fixed so the gap isolates the pattern change
    runtime_perturbed.spec = runtime_ideal.spec

    position = np.array(cfg.ues[0].position)

    def bound(runtime):
        contributions = []
        for k in range(runtime.n_aps):
            params = runtime.link_params(k, position)
            fim = fim_theta(
                runtime.models[k], params, runtime.ue_antennas[0], runtime.spec
            )
            contributions.append((local_fim_exact(fim, params), runtime.geometry[k]))
        return peb(global_fim(contributions))

    ideal = bound(runtime_ideal)
    perturbed = bound(runtime_perturbed)
    return {
        "ideal_peb": ideal,
        "perturbed_peb": perturbed,
        "relative_gap": abs(perturbed - ideal) / ideal,
    }


def _first_divergence(expected: str, actual: str) -> str:
    exp_lines = expected.splitlines()
    act_lines = actual.splitlines()
    for i, (e, a) in enumerate(zip(exp_lines, act_lines)):
        if e != a:
            return f"line {i + 1}: expected {e!r}, got {a!r}"
    if len(exp_lines) != len(act_lines):
        return (
            f"line count differs: expected {len(exp_lines)}, got {len(act_lines)}"
        )
    return "contents identical"


def _compare_numeric(expected: str, actual: str, tol: float) -> str | None:
    exp_lines = expected.splitlines()
    act_lines = actual.splitlines()
    if len(exp_lines) != len(act_lines):
        return f"row count differs: {len(exp_lines)} vs {len(act_lines)}"
    for i, (e, a) in enumerate(zip(exp_lines, act_lines)):
        if i == 0:
            if e != a:
                return f"header differs: expected {e!r}, got {a!r}"
            continue
        e_parts, a_parts = e.split(","), a.split(",")
        if len(e_parts) != len(a_parts):
            return f"row {i}: column count differs"
        for j, (ev, av) in enumerate(zip(e_parts, a_parts)):
            try:
                ef, af = float(ev), float(av)
            except ValueError:
                if ev != av:
                    return f"row {i}, column {j}: {ev!r} vs {av!r}"
                continue
            if ef == af:
                continue
            if abs(ef - af) > tol:
                return f"row {i}, column {j}: |{ev} - {av}| > {tol}"
    return None


def _parse_stats(text: str) -> dict:
    stats = {}
    for line in text.splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            stats[key.strip()] = float(value.strip())
    return stats


def verify_fixture(fixture: GoldenFixture, root: str) -> FixtureReport:
    """Regenerate one fixture and compare per its tolerance class."""
    expected_path = os.path.join(root, fixture.expected)
    with open(expected_path, "r", encoding="ascii") as fh:
        expected = fh.read()
    actual = regenerate(fixture, root)

    if fixture.tolerance_class == "bit-exact":
        if actual == expected:
            return FixtureReport(fixture.name, True, "bit-exact match")
        return FixtureReport(
            fixture.name, False, _first_divergence(expected, actual)
        )
    if fixture.tolerance_class == "numeric-1e-8":
        problem = _compare_numeric(expected, actual, NUMERIC_TOL)
        if problem is None:
            return FixtureReport(fixture.name, True, "all cells within 1e-8")
        return FixtureReport(fixture.name, False, problem)
    # statistical: the expected file stores the pilot stats for reference,
    # but pass/fail comes from the declared bands.
    stats = _parse_stats(actual)
    for metric, lo, hi in fixture.bands:
        if metric not in stats:
            return FixtureReport(fixture.name, False, f"metric {metric!r} missing")
        value = stats[metric]
        if not lo <= value <= hi:
            return FixtureReport(
                fixture.name,
                False,
                f"{metric} = {value!r} outside [{lo!r}, {hi!r}]",
            )
    return FixtureReport(fixture.name, True, "statistics within bands")


def verify_all(root: str, workers: int = 1) -> list:
    fixtures = load_manifest(root)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda f: verify_fixture(f, root), fixtures))
    return [verify_fixture(f, root) for f in fixtures]
