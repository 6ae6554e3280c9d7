"""Command-line entry points.

Subcommands map one-to-one onto the experiment drivers:

  validate      parse and validate a scenario config
  peb-map       bound contours over the surveillance region
  monte-carlo   one-shot positioning error versus the bound
  track         full tracking episode with logs and summary
  select-aps    AP activation for the configured user positions
  verify-fixtures  regenerate golden artifacts and compare

Exit codes: 0 success, 2 configuration error, 3 numerical infeasibility.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .apselect import InfeasibleSelectionError, brute_force_select, greedy_select, local_search
from .estimator import MlConfig, run_monte_carlo
from .fixtures import verify_all
from .mathcore import SingularGeometryError, SingularMatrixError
from .scenario import (
    ConfigError,
    _selection_problem,
    activation_csv,
    build_runtime,
    export_csv,
    export_summary,
    load_config_file,
    positioning_scenario,
    run_peb_map,
    run_tracking_episode,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmimo",
        description="Positioning bounds and user tracking for distributed "
        "access-point networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario config")
    p.add_argument("config")

    p = sub.add_parser("peb-map", help="bound map over the region")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--nx", type=int, default=50)
    p.add_argument("--ny", type=int, default=35)
    p.add_argument("--z", type=float, default=None)

    p = sub.add_parser("monte-carlo", help="positioning error versus bound")
    p.add_argument("config")
    p.add_argument("--snr", required=True, help="comma-separated SNR list in dB")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--coarse-step", type=float, default=0.3)

    p = sub.add_parser("track", help="run a tracking episode")
    p.add_argument("config")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("select-aps", help="choose active APs")
    p.add_argument("config")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--method", choices=("greedy", "brute"), default="greedy")

    p = sub.add_parser("verify-fixtures", help="check golden artifacts")
    p.add_argument("--root", default=".")
    p.add_argument("--workers", type=int, default=1)
    return parser


def _cmd_validate(args) -> int:
    load_config_file(args.config)
    print("config ok")
    return EXIT_OK


def _cmd_peb_map(args) -> int:
    cfg = load_config_file(args.config)
    grid = run_peb_map(cfg, args.nx, args.ny, z=args.z)
    export_csv(grid, args.out)
    finite = grid.values[np.isfinite(grid.values)]
    if finite.size:
        print(
            f"wrote {args.out}: {args.nx}x{args.ny} cells, "
            f"max {np.max(finite)!r}, min {np.min(finite)!r}"
        )
    else:
        print(f"wrote {args.out}: no localizable cells")
    return EXIT_OK


def _cmd_monte_carlo(args) -> int:
    cfg = load_config_file(args.config)
    runtime = build_runtime(cfg)
    scn = positioning_scenario(runtime)
    config = MlConfig(
        grid_extent=(runtime.box_max - runtime.box_min),
        coarse_step=args.coarse_step,
        grid_center=0.5 * (runtime.box_min + runtime.box_max),
    )
    snr_grid = [float(tok) for tok in args.snr.split(",") if tok.strip()]
    reports = run_monte_carlo(
        scn, snr_grid, args.trials, cfg.master_seed, config, workers=args.workers
    )
    export_csv(reports, args.out)
    for report in reports:
        print(
            f"snr {report.snr_db} dB: rmse {report.rmse!r} m, "
            f"bound {report.peb!r} m"
        )
    return EXIT_OK


def _cmd_track(args) -> int:
    cfg = load_config_file(args.config)
    log = run_tracking_episode(cfg)
    export_csv(log, args.out_prefix + "_track.csv")
    with open(args.out_prefix + "_activation.csv", "w", encoding="ascii") as fh:
        fh.write(activation_csv(log))
    summary = export_summary(log)
    with open(args.out_prefix + "_summary.txt", "w", encoding="ascii") as fh:
        fh.write(summary)
    print(summary, end="")
    return EXIT_OK


def _cmd_select_aps(args) -> int:
    cfg = load_config_file(args.config)
    runtime = build_runtime(cfg)
    positions = [np.array(ue.position) for ue in cfg.ues]
    problem = _selection_problem(runtime, positions)
    if args.method == "brute":
        chosen = brute_force_select(args.k, problem)
    else:
        chosen = local_search(greedy_select(args.k, problem), problem)
    print(",".join(str(i) for i in chosen.active_indices))
    return EXIT_OK


def _cmd_verify_fixtures(args) -> int:
    reports = verify_all(args.root, workers=args.workers)
    failed = False
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(f"{status} {report.name}: {report.message}")
        failed = failed or not report.passed
    return EXIT_NUMERICAL if failed else EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "peb-map": _cmd_peb_map,
    "monte-carlo": _cmd_monte_carlo,
    "track": _cmd_track,
    "select-aps": _cmd_select_aps,
    "verify-fixtures": _cmd_verify_fixtures,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularMatrixError, SingularGeometryError, InfeasibleSelectionError) as err:
        print(f"numerical infeasibility: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
