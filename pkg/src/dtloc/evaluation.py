"""Monte Carlo harness: error maps, measurement sweeps and percentile tables.

Every (position, K, B, T) combination draws from its own random stream, derived from the
master seed with ``SeedSequence(seed, spawn_key=(p, K, B, T))``.  Results therefore do
not depend on execution order or on how work is split across processes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._parallel import map_chunks
from .locate import ReportSpec, localize_batch, position_error, report_layout, sample_values
from .rfmap import RfMapDb, load, save

log = logging.getLogger(__name__)

LADDER = (1, 2, 4, 6)
DEFAULT_QUANTILES = (0.8, 0.9, 0.99)
EXPERIMENTS = ("error_map", "sweep", "percentiles")
SWEEPS = ("K", "B", "T", "joint")

# Published maximum-error values (m) for a comparable LoS/NLoS pair, keyed by
# (label, quantile) and ordered like LADDER.  Shown next to our output, never asserted.
REFERENCE_ERRORS_M = {
    ("LoS", 0.99): (48.1, 31.7, 2.1, 1.8),
    ("LoS", 0.9): (40.8, 9.4, 2.0, 1.6),
    ("LoS", 0.8): (32.3, 3.0, 1.9, 1.6),
    ("NLoS", 0.99): (123.7, 121.5, 81.4, 1.4),
    ("NLoS", 0.9): (111.2, 116.7, 66.1, 0.8),
    ("NLoS", 0.8): (91.6, 112.8, 0.8, 0.7),
}
REFERENCE_CORRELATION = -0.87


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    db_path: str | None = None
    output_dir: str = "results"
    experiments: tuple[str, ...] = EXPERIMENTS
    test_positions: str | tuple[int, ...] = "auto"  # "auto" or explicit retained indices
    trials: int = 1000
    error_map_trials: int | None = None  # None = trials
    n_beams: int = 1  # error-map report shape
    n_subbands: int = 1
    n_times: int = 1
    sigma_dbm: float = 2.0
    subband_policy: str = "even"
    ladder: tuple[int, ...] = LADDER
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    seed: int = 0
    bootstrap: int = 1000
    confidence: float = 0.95
    los_distance_m: float = 50.0
    nlos_distance_m: float = 80.0
    distance_tol_m: float = 3.0

    def __post_init__(self):
        if self.trials < 1 or (self.error_map_trials is not None and self.error_map_trials < 1):
            raise ConfigError("trials must be >= 1")
        bad = set(self.experiments) - set(EXPERIMENTS)
        if bad:
            raise ConfigError(f"unknown experiments {sorted(bad)}; choose from {EXPERIMENTS}")
        for q in self.quantiles:
            if not 0 < q <= 1:
                raise ConfigError(f"quantile {q} outside (0, 1]")
        if not self.ladder or min(self.ladder) < 1:
            raise ConfigError("ladder values must be >= 1")
        if self.bootstrap < 1 or not 0 < self.confidence < 1:
            raise ConfigError("bootstrap must be >= 1 and confidence in (0, 1)")
        if self.sigma_dbm < 0:
            raise ConfigError("sigma_dbm must be >= 0")
        tp = self.test_positions
        if isinstance(tp, str) and tp != "auto":
            raise ConfigError('test_positions must be "auto" or a list of indices')

    @property
    def map_trials(self) -> int:
        return self.error_map_trials if self.error_map_trials is not None else self.trials

    def check_against(self, db: RfMapDb) -> None:
        if max(self.ladder) > min(db.n_beams, db.n_subbands) and "sweep" in self.experiments:
            raise ConfigError(f"ladder value {max(self.ladder)} exceeds database dimensions")
        if self.n_beams > db.n_beams or self.n_subbands > db.n_subbands:
            raise ConfigError("error-map report shape exceeds database dimensions")
        if not isinstance(self.test_positions, str):
            for p in self.test_positions:
                if not 0 <= p < db.n_positions:
                    raise ConfigError(f"test position {p} out of range")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def config_from_dict(doc: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    try:
        return ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc)


# --------------------------------------------------------------------------- #
# trials
# --------------------------------------------------------------------------- #

def trial_stream(seed: int, p: int, kbt: tuple[int, int, int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(p),) + tuple(int(v) for v in kbt)))


def trial_errors(db: RfMapDb, p: int, kbt: tuple[int, int, int], trials: int, cfg: ExperimentConfig) -> np.ndarray:
    """Errors (m) of ``trials`` independent report+localize rounds at position ``p``."""
    spec = ReportSpec(*kbt, sigma_dbm=cfg.sigma_dbm, subband_policy=cfg.subband_policy)
    rng = trial_stream(cfg.seed, p, kbt)
    layout = report_layout(db, p, spec, rng)
    values = sample_values(db, p, layout, spec.sigma_dbm, rng, trials)
    return position_error(db, p, localize_batch(db, layout, values))


_DB_CACHE: dict[str, RfMapDb] = {}


def _worker_db(path: str) -> RfMapDb:
    if path not in _DB_CACHE:
        _DB_CACHE.clear()
        _DB_CACHE[path] = load(path)
    return _DB_CACHE[path]


def _errors_chunk(jobs, db_path, cfg):
    db = _worker_db(db_path)
    return [trial_errors(db, p, kbt, n, cfg) for p, kbt, n in jobs]


class _Runner:
    """Runs trial jobs in-process, or in a pool that reads the database from disk."""

    def __init__(self, db: RfMapDb, cfg: ExperimentConfig, workers: int):
        self.db, self.cfg, self.workers = db, cfg, max(1, int(workers))
        self._tmp = None
        self.db_path = cfg.db_path
        if self.workers > 1 and self.db_path is None:
            self._tmp = tempfile.TemporaryDirectory()
            self.db_path = str(Path(self._tmp.name) / "db.rfm")
            save(db, self.db_path)

    def run(self, jobs: list) -> list[np.ndarray]:
        if self.workers == 1:
            return [trial_errors(self.db, p, kbt, n, self.cfg) for p, kbt, n in jobs]
        return map_chunks(_errors_chunk, jobs, self.workers, extra=(self.db_path, self.cfg))

    def close(self):
        if self._tmp is not None:
            self._tmp.cleanup()


# --------------------------------------------------------------------------- #
# statistics
# --------------------------------------------------------------------------- #

def bootstrap_mean_ci(errors: np.ndarray, rng: np.random.Generator, n_resamples: int = 1000,
                      confidence: float = 0.95) -> tuple[float, float]:
    errors = np.asarray(errors, dtype=float)
    idx = rng.integers(0, len(errors), size=(n_resamples, len(errors)))
    means = errors[idx].mean(axis=1)
    a = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(means, [a, 1.0 - a])
    return float(lo), float(hi)


def empirical_quantiles(errors: np.ndarray, quantiles) -> np.ndarray:
    """Smallest observed error not exceeded in a fraction ``q`` of trials."""
    return np.quantile(np.asarray(errors, dtype=float), list(quantiles), method="inverted_cdf")


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt((xc @ xc) * (yc @ yc))
    if den == 0:
        return float("nan")
    return float(np.clip((xc @ yc) / den, -1.0, 1.0))


def best_rss_dbm(db: RfMapDb) -> np.ndarray:
    """Strongest beam-and-subband RSS of each position."""
    return db.values_dbm.max(axis=(1, 2))


def non_increasing_within_ci(means, lo, hi) -> bool:
    """Each rung's interval reaches at or below the previous rung's interval."""
    return all(lo[i + 1] <= hi[i] for i in range(len(means) - 1))


# --------------------------------------------------------------------------- #
# experiments
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class ErrorStats:
    position_index: np.ndarray = field(repr=False)
    mean_error_m: np.ndarray = field(repr=False)
    median_error_m: np.ndarray = field(repr=False)
    max_error_m: np.ndarray = field(repr=False)
    best_rss_dbm: np.ndarray = field(repr=False)
    quantiles: tuple[float, ...]
    percentiles_m: tuple[float, ...]  # pooled over all positions and trials
    correlation: float

    def summary(self) -> dict:
        return {
            "positions": int(len(self.position_index)),
            "mean_error_m": float(self.mean_error_m.mean()),
            "quantiles": list(self.quantiles),
            "percentiles_m": list(self.percentiles_m),
            "rss_error_correlation": self.correlation,
            "reference_correlation": REFERENCE_CORRELATION,
        }


def _fmt(v) -> str:
    return repr(float(v))


def run_error_map(cfg: ExperimentConfig, db: RfMapDb, workers: int = 1, out_dir: str | Path | None = None) -> ErrorStats:
    """Baseline trials at every retained position; one CSV row per position (masked cells omitted)."""
    kbt = (cfg.n_beams, cfg.n_subbands, cfg.n_times)
    runner = _Runner(db, cfg, workers)
    try:
        errs = runner.run([(p, kbt, cfg.map_trials) for p in range(db.n_positions)])
    finally:
        runner.close()
    E = np.stack(errs) if errs else np.zeros((0, cfg.map_trials))
    best = best_rss_dbm(db)
    stats = ErrorStats(
        position_index=np.arange(db.n_positions),
        mean_error_m=E.mean(axis=1),
        median_error_m=np.median(E, axis=1),
        max_error_m=E.max(axis=1),
        best_rss_dbm=best,
        quantiles=tuple(cfg.quantiles),
        percentiles_m=tuple(float(v) for v in empirical_quantiles(E.ravel(), cfg.quantiles)),
        correlation=pearson(best, E.mean(axis=1)),
    )
    if out_dir is not None:
        with open(Path(out_dir) / "error_map.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["position_index", "row", "col", "x", "y", "z", "los", "best_rss_dbm",
                        "mean_error_m", "median_error_m", "max_error_m"])
            for p in range(db.n_positions):
                r, c = db.grid.row_col(p)
                x, y, z = db.positions[p]
                w.writerow([p, r, c, _fmt(x), _fmt(y), _fmt(z), int(db.los[p]), _fmt(best[p]),
                            _fmt(stats.mean_error_m[p]), _fmt(stats.median_error_m[p]), _fmt(stats.max_error_m[p])])
    return stats


def auto_positions(db: RfMapDb, cfg: ExperimentConfig | None = None) -> dict[str, int]:
    """Representative LoS and NLoS positions: the strongest cell of each kind near the target ranges."""
    cfg = cfg or ExperimentConfig()
    bs = np.asarray(db.metadata["bs_position"][:2], dtype=float)
    dist = np.linalg.norm(db.positions[:, :2] - bs, axis=1)
    best = best_rss_dbm(db)
    out = {}
    for label, want, mask in (("LoS", cfg.los_distance_m, db.los), ("NLoS", cfg.nlos_distance_m, ~db.los)):
        cand = np.flatnonzero(mask & (np.abs(dist - want) <= cfg.distance_tol_m))
        if len(cand) == 0:
            cand = np.flatnonzero(mask)
            if len(cand) == 0:
                continue
            cand = cand[np.abs(dist[cand] - want) == np.abs(dist[cand] - want).min()]
        out[label] = int(cand[np.argmax(best[cand])])  # argmax keeps the lowest index on ties
    return out


def resolve_positions(db: RfMapDb, cfg: ExperimentConfig) -> dict[str, int]:
    if cfg.test_positions == "auto":
        return auto_positions(db, cfg)
    return {f"pos{p}": int(p) for p in cfg.test_positions}


def _sweep_kbt(sweep: str, v: int) -> tuple[int, int, int]:
    return {"K": (v, 1, 1), "B": (1, v, 1), "T": (1, 1, v), "joint": (v, v, v)}[sweep]


@dataclass(frozen=True)
class SweepPoint:
    sweep: str
    value: int
    kbt: tuple[int, int, int]
    trials: int
    mean_error_m: float
    ci_low_m: float
    ci_high_m: float

    @property
    def half_width_m(self) -> float:
        return (self.ci_high_m - self.ci_low_m) / 2.0


def _sweep_points(cfg: ExperimentConfig, p: int, errors: dict) -> list[SweepPoint]:
    out = []
    for sweep in SWEEPS:
        for v in cfg.ladder:
            kbt = _sweep_kbt(sweep, v)
            e = errors[kbt]
            rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(p,) + kbt + (1,)))
            lo, hi = bootstrap_mean_ci(e, rng, cfg.bootstrap, cfg.confidence)
            out.append(SweepPoint(sweep, v, kbt, len(e), float(e.mean()), lo, hi))
    return out


def run_sweep(cfg: ExperimentConfig, db: RfMapDb, position: int, workers: int = 1,
              out_dir: str | Path | None = None, label: str | None = None) -> list[SweepPoint]:
    """Mean error with bootstrap intervals along the K, B, T and joint ladders."""
    if not 0 <= position < db.n_positions:
        raise ConfigError(f"position {position} out of range")
    combos = sorted({_sweep_kbt(s, v) for s in SWEEPS for v in cfg.ladder})
    runner = _Runner(db, cfg, workers)
    try:
        errs = runner.run([(position, kbt, cfg.trials) for kbt in combos])
    finally:
        runner.close()
    points = _sweep_points(cfg, position, dict(zip(combos, errs)))
    if out_dir is not None:
        write_sweep_csv(points, Path(out_dir) / f"sweep_{label or 'pos'}_{position}.csv")
    return points


def write_sweep_csv(points: list[SweepPoint], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "value", "n_beams", "n_subbands", "n_times", "trials",
                    "mean_error_m", "ci_low_m", "ci_high_m", "half_width_m"])
        for s in points:
            w.writerow([s.sweep, s.value, *s.kbt, s.trials, _fmt(s.mean_error_m),
                        _fmt(s.ci_low_m), _fmt(s.ci_high_m), _fmt(s.half_width_m)])


def percentile_table(cfg: ExperimentConfig, db: RfMapDb, positions: dict[str, int], quantiles=None,
                     workers: int = 1, out_dir: str | Path | None = None) -> list[dict]:
    """Rows are (position, quantile), columns the joint combos of the ladder, plus reference columns."""
    quantiles = tuple(quantiles if quantiles is not None else cfg.quantiles)
    for q in quantiles:
        if not 0 < q <= 1:
            raise ConfigError(f"quantile {q} outside (0, 1]")
    combos = [(v, v, v) for v in cfg.ladder]
    jobs = [(p, kbt, cfg.trials) for p in positions.values() for kbt in combos]
    runner = _Runner(db, cfg, workers)
    try:
        errs = iter(runner.run(jobs))
    finally:
        runner.close()
    rows = []
    for label, p in positions.items():
        table = np.stack([empirical_quantiles(next(errs), quantiles) for _ in combos], axis=1)
        for qi, q in enumerate(sorted(quantiles, reverse=True)):
            qpos = quantiles.index(q)
            row = {"position": label, "position_index": p, "quantile": q}
            ref = REFERENCE_ERRORS_M.get((label, q)) if tuple(cfg.ladder) == LADDER else None
            for ci, kbt in enumerate(combos):
                row[_combo(kbt)] = float(table[qpos, ci])
            for ci, kbt in enumerate(combos):
                row[f"reference_{_combo(kbt)}"] = ref[ci] if ref else None
            rows.append(row)
    if out_dir is not None:
        with open(Path(out_dir) / "percentiles.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = list(rows[0].keys()) if rows else ["position", "position_index", "quantile"]
            w.writerow(header)
            for r in rows:
                w.writerow(["" if r[h] is None else (_fmt(r[h]) if isinstance(r[h], float) else r[h]) for h in header])
    return rows


def _combo(kbt) -> str:
    return "({},{},{})".format(*kbt)


# --------------------------------------------------------------------------- #
# driver
# --------------------------------------------------------------------------- #

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig, db: RfMapDb | None = None, workers: int = 1) -> dict:
    """Run the configured experiments, write CSVs plus ``manifest.json`` and ``timings.json``.

    The manifest holds only reproducible content (config, seeds, hashes of inputs and
    outputs); wall-clock timings and the worker count go to ``timings.json``.
    """
    if db is None:
        if cfg.db_path is None:
            raise ConfigError("no database given")
        db = load(cfg.db_path)
    cfg.check_against(db)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    summary: dict = {}
    written: list[str] = []
    positions = resolve_positions(db, cfg)

    if "error_map" in cfg.experiments:
        t0 = time.perf_counter()
        stats = run_error_map(cfg, db, workers, out)
        timings["error_map_s"] = time.perf_counter() - t0
        summary["error_map"] = stats.summary()
        written.append("error_map.csv")
        log.info("error map: correlation %.3f", stats.correlation)
    if "sweep" in cfg.experiments:
        t0 = time.perf_counter()
        for label, p in positions.items():
            run_sweep(cfg, db, p, workers, out, label)
            written.append(f"sweep_{label}_{p}.csv")
        timings["sweep_s"] = time.perf_counter() - t0
    if "percentiles" in cfg.experiments:
        t0 = time.perf_counter()
        percentile_table(cfg, db, positions, workers=workers, out_dir=out)
        written.append("percentiles.csv")
        timings["percentiles_s"] = time.perf_counter() - t0

    config = cfg.to_dict()
    config.pop("output_dir")  # where results go is not part of what they are
    manifest = {
        "config": config,
        "database": {
            "scene_hash": db.scene_hash,
            "shape": list(db.shape),
            "sha256": _sha256(Path(cfg.db_path)) if cfg.db_path else None,
        },
        "seed": cfg.seed,
        "seed_scheme": "SeedSequence(seed, spawn_key=(position, K, B, T)); bootstrap adds a trailing 1",
        "test_positions": positions,
        "summary": summary,
        "outputs": {name: _sha256(out / name) for name in sorted(written)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps({"workers": workers, **timings}, indent=2, sort_keys=True) + "\n")
    return manifest
