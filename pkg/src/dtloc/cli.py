"""Command-line entry point: ``dtloc validate | build | localize | evaluate``.

Exit codes:
  0  success
  1  any other failure
  2  parse error (unreadable scene, report or config file; bad command line)
  3  validation error (scene invariant or experiment config)
  4  scene-hash mismatch between database and report
  5  database integrity error (bad magic, version, checksum, truncation)

Global defaults may come from a JSON file given with ``--config``: top-level keys
``workers``, ``seed`` and ``verbose``, and one object per subcommand whose keys are that
command's long option names with dashes replaced by underscores.  Flags on the command
line always win.  The ``DTLOC_WORKERS`` environment variable sets the default worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import WORKERS_ENV, default_workers
from .channel import dft_codebook
from .evaluation import ConfigError, load_config, run_experiment
from .locate import ReportError, ReportSpec, load_report, localize, sample_report
from .raytrace import TraceError
from .rfmap import RfMapError, SceneHashMismatch, build, load, path_count_histogram, save
from .scene import SceneParseError, SceneValidationError, building_overlaps, generate_grid, load_scene

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_INVALID, EXIT_HASH, EXIT_DB = 0, 1, 2, 3, 4, 5
REFERENCE_RETAINED = 4286

log = logging.getLogger("dtloc")

_BUILTIN = {
    "build": {"depth": 5, "oversampling": 1, "aggregation": "coherent", "csv": None},
    "localize": {"sigma": 2.0, "estimator_sigma": None, "top": 5, "report": None, "simulate": None},
    "evaluate": {"out": None},
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtloc", description="Digital-twin RF-map fingerprint localization.",
                                epilog=__doc__.split("\n\n", 1)[1], formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"dtloc {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=None, help="more log output (repeatable)")
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=None, help="master seed for simulated reports and experiments (default 0)")
    p.add_argument("--config", type=Path, default=None, help="JSON file of default option values")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scene file and summarise its grid")
    v.add_argument("scene", type=Path)

    b = sub.add_parser("build", help="trace a scene and write its RF map database")
    b.add_argument("scene", type=Path)
    b.add_argument("out", type=Path)
    b.add_argument("--depth", type=int, default=None, help="max interactions per path, walls plus ground (default 5)")
    b.add_argument("--oversampling", type=int, default=None, help="DFT codebook oversampling factor (default 1)")
    b.add_argument("--aggregation", choices=("coherent", "power"), default=None,
                   help="subband aggregation of subcarriers (default coherent)")
    b.add_argument("--csv", type=Path, default=None, help="also export beam,subband,position_index,rss_dbm CSV")

    lz = sub.add_parser("localize", help="localize one report against a database")
    lz.add_argument("db", type=Path)
    src = lz.add_mutually_exclusive_group(required=True)
    src.add_argument("--report", type=Path, help="report file (JSON)")
    src.add_argument("--simulate", nargs=5, type=int, metavar=("P", "K", "B", "T", "SEED"),
                     help="simulate a report at retained position P with K beams, B subbands, T times")
    lz.add_argument("--sigma", type=float, default=None, help="sampler std in dB for --simulate; 0 = noiseless (default 2)")
    lz.add_argument("--estimator-sigma", type=float, default=None, help="std assumed by the estimator (default: --sigma, or 2 if that is 0)")
    lz.add_argument("--top", type=int, default=None, help="number of best candidates to print (default 5)")

    e = sub.add_parser("evaluate", help="run the experiments described by a config file")
    e.add_argument("db", type=Path)
    e.add_argument("experiment", type=Path, help="experiment config (JSON)")
    e.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    return p


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise _CliError(EXIT_PARSE, f"config {args.config}: {exc}") from exc
    args.seed_given = args.seed is not None or "seed" in cfg
    for key, fallback in (("verbose", 0), ("seed", 0), ("workers", None)):
        if getattr(args, key) is None:
            setattr(args, key, cfg.get(key, fallback))
    if args.workers is None:
        args.workers = default_workers()
    if args.workers < 1:
        raise _CliError(EXIT_INVALID, "--workers must be >= 1")
    section = cfg.get(args.command, {})
    for key, fallback in _BUILTIN.get(args.command, {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, section.get(key, fallback))
    for key in ("scene", "out", "db", "experiment", "report", "csv"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(args, key, Path(val).resolve())
    return args


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #

def cmd_validate(args) -> int:
    scene = load_scene(args.scene)
    grid = generate_grid(scene)
    for i, j in building_overlaps(scene):
        log.warning("buildings %d and %d overlap (permitted)", i, j)
    rows, cols = scene.grid.shape
    print(f"scene {scene.name or args.scene.name}: valid")
    print(f"  buildings: {len(scene.buildings)}, materials: {len(scene.materials)}")
    print(f"  carrier {scene.carrier_hz / 1e9:g} GHz, {scene.n_subbands} subbands, {scene.bs.array.n_antennas}-antenna array")
    print(f"  grid: {cols} x {rows} = {grid.n_cells} cells, {grid.n_masked} masked, "
          f"{len(grid)} retained (reference {REFERENCE_RETAINED})")
    print(f"  scene hash: {scene.scene_hash()}")
    return EXIT_OK


def cmd_build(args) -> int:
    scene = load_scene(args.scene)
    codebook = dft_codebook(scene.bs.array.n_antennas, args.oversampling)
    db = build(scene, codebook=codebook, max_depth=args.depth, workers=args.workers, aggregation=args.aggregation)
    save(db, args.out)
    if args.csv is not None:
        db.to_csv(args.csv)
    rate = db.n_positions / max(db.build_seconds or 0.0, 1e-9)
    print(f"wrote {args.out}: tensor {db.n_beams} x {db.n_subbands} x {db.n_positions}")
    print(f"  {db.n_positions} positions in {db.build_seconds:.1f} s ({rate:.0f} positions/s), "
          f"{int(db.los.sum())} with line of sight")
    hist = path_count_histogram(db)
    print("  paths per position: " + ", ".join(f"{k}:{v}" for k, v in hist.items()))
    return EXIT_OK


def cmd_localize(args) -> int:
    db = load(args.db)
    if args.report is not None:
        report = load_report(args.report)
        sigma = args.estimator_sigma if args.estimator_sigma is not None else args.sigma
    else:
        p, k, b, t, seed = args.simulate
        spec = ReportSpec(k, b, t, sigma_dbm=args.sigma, seed=seed, estimator_sigma_dbm=args.estimator_sigma)
        if not 0 <= p < db.n_positions:
            raise _CliError(EXIT_INVALID, f"position {p} out of range [0, {db.n_positions})")
        report = sample_report(db, p, spec)
        sigma = spec.estimator_sigma
    result = localize(db, report, sigma_dbm=sigma)
    log.info("localized %d entries in %.4f s", len(report), result.runtime_s)
    record = {
        "estimate": result.estimate,
        "estimate_xyz": list(result.estimate_xyz),
        "true_position": result.true_position,
        "error_m": result.error_m,
        "entries": len(report),
        "top": [{"position": i, "xyz": [float(v) for v in db.positions[i]], "log_likelihood": s}
                for i, s in result.top(args.top)],
    }
    print(json.dumps(record))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.experiment)
    overrides = {"db_path": str(args.db)}
    if args.seed_given:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    cfg = replace(cfg, **overrides)
    db = load(args.db)
    manifest = run_experiment(cfg, db, workers=args.workers)
    print(f"wrote {len(manifest['outputs'])} CSV files and manifest.json to {cfg.output_dir}")
    em = manifest["summary"].get("error_map")
    if em:
        print(f"  mean baseline error {em['mean_error_m']:.2f} m; RSS/error correlation "
              f"{em['rss_error_correlation']:.3f} (reference {em['reference_correlation']})")
    return EXIT_OK


_COMMANDS = {"validate": cmd_validate, "build": cmd_build, "localize": cmd_localize, "evaluate": cmd_evaluate}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _resolve(args)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
        np.seterr(all="ignore")
        return _COMMANDS[args.command](args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SceneParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SceneValidationError as exc:
        print(f"invalid scene: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SceneHashMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HASH
    except RfMapError as exc:
        print(f"database integrity error: {exc}", file=sys.stderr)
        return EXIT_DB
    except ConfigError as exc:
        print(f"invalid experiment config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (TraceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
