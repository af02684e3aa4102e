"""Synthetic measurement reports and maximum-likelihood position search.

A report is a set of ``(beam, subband, time, rss_dbm)`` entries.  Each entry is modelled
as Gaussian around the candidate's stored fingerprint value, and its probability is the
mass in a window of half-width ``delta`` around the measurement.  Scores are summed in
the log domain, and the search is an exhaustive scan over every retained position.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rfmap import RfMapDb, SceneHashMismatch

DEFAULT_SIGMA_DBM = 2.0
DEFAULT_DELTA_DBM = 1e-4
SUBBAND_POLICIES = ("even", "first")
REPORT_FORMAT = "dtloc-report"
REPORT_VERSION = 1
_CHUNK_ELEMS = 1 << 22  # bound on trials x positions x entries held at once


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class ReportSpec:
    """How a user report is formed.

    ``sigma_dbm`` drives the sampler; ``estimator_sigma_dbm`` (None = same) is what the
    localizer assumes.  ``sigma_dbm = 0`` gives noiseless reports.
    """

    n_beams: int = 1
    n_subbands: int = 1
    n_times: int = 1
    sigma_dbm: float = DEFAULT_SIGMA_DBM
    seed: int = 0
    subband_policy: str = "even"
    subbands: tuple[int, ...] | None = None  # explicit list overrides the policy
    estimator_sigma_dbm: float | None = None
    noisy_beam_selection: bool = False

    def __post_init__(self):
        for name in ("n_beams", "n_subbands", "n_times"):
            if getattr(self, name) < 1:
                raise ReportError(f"{name} must be >= 1")
        if not self.sigma_dbm >= 0:
            raise ReportError("sigma_dbm must be >= 0")
        if self.estimator_sigma_dbm is not None and not self.estimator_sigma_dbm > 0:
            raise ReportError("estimator_sigma_dbm must be > 0")
        if self.subband_policy not in SUBBAND_POLICIES:
            raise ReportError(f"subband_policy must be one of {SUBBAND_POLICIES}")
        if self.subbands is not None and len(self.subbands) != self.n_subbands:
            raise ReportError("explicit subbands must have n_subbands entries")

    @property
    def estimator_sigma(self) -> float:
        """Sigma the localizer should assume; falls back to the default when sampling is noiseless."""
        if self.estimator_sigma_dbm is not None:
            return self.estimator_sigma_dbm
        return self.sigma_dbm if self.sigma_dbm > 0 else DEFAULT_SIGMA_DBM

    def check_against(self, db: RfMapDb) -> None:
        if self.n_beams > db.n_beams:
            raise ReportError(f"n_beams {self.n_beams} exceeds database beams {db.n_beams}")
        if self.n_subbands > db.n_subbands:
            raise ReportError(f"n_subbands {self.n_subbands} exceeds database subbands {db.n_subbands}")
        if self.subbands is not None and not all(0 <= b < db.n_subbands for b in self.subbands):
            raise ReportError("explicit subband index out of range")


def select_subbands(n_subbands: int, total: int, policy: str = "even") -> np.ndarray:
    """Subband indices a user reports.  ``even`` centres them in equal slices of the band."""
    if not 1 <= n_subbands <= total:
        raise ReportError(f"need 1 <= n_subbands <= {total}")
    if policy == "first":
        return np.arange(n_subbands)
    if policy == "even":
        return (2 * np.arange(n_subbands) + 1) * total // (2 * n_subbands)
    raise ReportError(f"unknown subband policy {policy!r}")


def select_top_beams(fingerprint: np.ndarray, n_beams: int, subband: int) -> np.ndarray:
    """Indices of the ``n_beams`` strongest beams in one subband, strongest first; ties to lower index."""
    column = np.asarray(fingerprint)[:, subband]
    if not 1 <= n_beams <= len(column):
        raise ReportError(f"need 1 <= n_beams <= {len(column)}")
    return np.argsort(-column, kind="stable")[:n_beams]


@dataclass(frozen=True, eq=False)
class MeasurementReport:
    beams: np.ndarray  # (n,) int
    subbands: np.ndarray
    times: np.ndarray
    rss_dbm: np.ndarray  # (n,) float
    scene_hash: str
    true_position: int | None = None  # evaluation only; the estimator never reads it

    def __post_init__(self):
        n = len(self.rss_dbm)
        if not (len(self.beams) == len(self.subbands) == len(self.times) == n):
            raise ReportError("report columns have different lengths")

    def __len__(self) -> int:
        return len(self.rss_dbm)

    @property
    def entries(self) -> list[tuple[int, int, int, float]]:
        return [(int(k), int(b), int(t), float(r)) for k, b, t, r in zip(self.beams, self.subbands, self.times, self.rss_dbm)]

    @classmethod
    def from_entries(cls, entries, scene_hash: str, true_position: int | None = None) -> "MeasurementReport":
        rows = list(entries)
        if not rows:
            raise ReportError("report has no entries")
        cols = list(zip(*rows))
        return cls(
            beams=np.asarray(cols[0], dtype=int),
            subbands=np.asarray(cols[1], dtype=int),
            times=np.asarray(cols[2], dtype=int),
            rss_dbm=np.asarray(cols[3], dtype=float),
            scene_hash=scene_hash,
            true_position=true_position,
        )

    def concat(self, other: "MeasurementReport") -> "MeasurementReport":
        if other.scene_hash != self.scene_hash:
            raise SceneHashMismatch(self.scene_hash, other.scene_hash)
        return MeasurementReport(
            np.concatenate([self.beams, other.beams]),
            np.concatenate([self.subbands, other.subbands]),
            np.concatenate([self.times, other.times]),
            np.concatenate([self.rss_dbm, other.rss_dbm]),
            self.scene_hash,
            self.true_position,
        )

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "scene_hash": self.scene_hash,
            "true_position": self.true_position,
            "entries": [list(e) for e in self.entries],
        }


def save_report(report: MeasurementReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n")


def report_from_dict(doc: dict) -> MeasurementReport:
    if doc.get("format") != REPORT_FORMAT:
        raise ReportError(f"not a {REPORT_FORMAT} document")
    if doc.get("version") != REPORT_VERSION:
        raise ReportError(f"report version {doc.get('version')} not supported")
    try:
        entries = [(int(k), int(b), int(t), float(r)) for k, b, t, r in doc["entries"]]
        return MeasurementReport.from_entries(entries, str(doc["scene_hash"]), doc.get("true_position"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportError(f"malformed report: {exc}") from exc


def load_report(path: str | Path) -> MeasurementReport:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: invalid JSON ({exc})") from exc
    return report_from_dict(doc)


# --------------------------------------------------------------------------- #
# sampling
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ReportLayout:
    """Which (beam, subband) cells a report covers, in entry order beam-major then subband then time."""

    beams: np.ndarray
    subbands: np.ndarray
    n_times: int

    def columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nk, nb, nt = len(self.beams), len(self.subbands), self.n_times
        k = np.repeat(self.beams, nb * nt)
        b = np.tile(np.repeat(self.subbands, nt), nk)
        t = np.tile(np.arange(nt), nk * nb)
        return k, b, t


def report_layout(db: RfMapDb, p: int, spec: ReportSpec, rng: np.random.Generator | None = None) -> ReportLayout:
    spec.check_against(db)
    fp = db.fingerprint(p)
    if spec.subbands is not None:
        subbands = np.asarray(spec.subbands, dtype=int)
    else:
        subbands = select_subbands(spec.n_subbands, db.n_subbands, spec.subband_policy)
    ref = int(subbands[0])
    if spec.noisy_beam_selection and spec.sigma_dbm > 0:
        if rng is None:
            raise ReportError("noisy beam selection needs a generator")
        noisy = fp[:, ref] + spec.sigma_dbm * rng.standard_normal(db.n_beams)
        beams = select_top_beams(noisy[:, None], spec.n_beams, 0)
    else:
        beams = select_top_beams(fp, spec.n_beams, ref)
    return ReportLayout(beams=beams, subbands=subbands, n_times=spec.n_times)


def sample_values(db: RfMapDb, p: int, layout: ReportLayout, sigma_dbm: float,
                  rng: np.random.Generator, n_trials: int = 1) -> np.ndarray:
    """(n_trials, n_entries) Gaussian draws around the stored fingerprint."""
    k, b, _ = layout.columns()
    mu = db.fingerprint(p)[k, b]
    if sigma_dbm == 0:
        return np.broadcast_to(mu, (n_trials, len(mu))).copy()
    return mu + sigma_dbm * rng.standard_normal((n_trials, len(mu)))


def sample_report(db: RfMapDb, p: int, spec: ReportSpec, rng: np.random.Generator | None = None) -> MeasurementReport:
    """One report for true position ``p``; reproducible from ``spec.seed`` unless a generator is passed."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    layout = report_layout(db, p, spec, rng)
    k, b, t = layout.columns()
    values = sample_values(db, p, layout, spec.sigma_dbm, rng)[0]
    return MeasurementReport(k, b, t, values, db.scene_hash, true_position=p)


# --------------------------------------------------------------------------- #
# likelihood and search
# --------------------------------------------------------------------------- #

def entry_log_constant(sigma_dbm: float, delta_dbm: float) -> float:
    """Candidate-independent part of one entry's log-probability."""
    return math.log(2.0 * delta_dbm) - math.log(sigma_dbm * math.sqrt(2.0 * math.pi))


def _check(db: RfMapDb, report: MeasurementReport) -> None:
    db.check_scene(report.scene_hash)
    if len(report) == 0:
        raise ReportError("report has no entries")
    if report.beams.min() < 0 or report.beams.max() >= db.n_beams:
        raise ReportError("report beam index out of database range")
    if report.subbands.min() < 0 or report.subbands.max() >= db.n_subbands:
        raise ReportError("report subband index out of database range")


@dataclass(frozen=True, eq=False)
class LocalizationResult:
    estimate: int
    estimate_xyz: tuple[float, float, float]
    log_likelihood: np.ndarray = field(repr=False)
    error_m: float | None
    runtime_s: float
    true_position: int | None = None

    def top(self, n: int = 5) -> list[tuple[int, float]]:
        order = np.argsort(-self.log_likelihood, kind="stable")[:n]
        return [(int(i), float(self.log_likelihood[i])) for i in order]


def position_error(db: RfMapDb, true_p: int, est_p) -> np.ndarray | float:
    d = db.positions[np.asarray(est_p)] - db.positions[true_p]
    return np.sqrt(np.sum(d * d, axis=-1))



def squared_residuals(mu: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sum of squared residuals by direct subtraction; ``mu`` (P, n), ``x`` (T, n) -> (T, P)."""
    out = np.empty((x.shape[0], mu.shape[0]))
    step = max(1, _CHUNK_ELEMS // max(1, mu.size))
    for s in range(0, x.shape[0], step):
        d = x[s : s + step, None, :] - mu[None, :, :]
        out[s : s + step] = (d * d).sum(axis=2)
    return out


def log_likelihood(db: RfMapDb, report: MeasurementReport, candidate: int | None = None,
                   sigma_dbm: float = DEFAULT_SIGMA_DBM, delta_dbm: float = DEFAULT_DELTA_DBM):
    """Log-probability of the report at one candidate, or at every candidate if ``candidate`` is None."""
    _check(db, report)
    if candidate is None:
        mu = db.values_dbm[:, report.beams, report.subbands]
    else:
        mu = db.fingerprint(candidate)[report.beams, report.subbands][None, :]
    sq = squared_residuals(mu, report.rss_dbm[None, :])[0]
    ll = -sq / (2.0 * sigma_dbm**2) + len(report) * entry_log_constant(sigma_dbm, delta_dbm)
    return ll if candidate is None else float(ll[0])


class _Scanner:
    """Candidate-dependent part of the residual sum for reports sharing one set of entry cells.

    Entries falling in the same (beam, subband) cell are pooled: with per-cell entry count
    ``T_c`` and measurement sum ``S_c``, the residual sum is ``sum(x^2)`` plus
    ``sum_c mu_c (T_c mu_c - 2 S_c)``, which is two matrix products against the database.
    """

    def __init__(self, db: RfMapDb, beams: np.ndarray, subbands: np.ndarray):
        flat = np.asarray(beams) * db.n_subbands + np.asarray(subbands)
        cells, inv, counts = np.unique(flat, return_inverse=True, return_counts=True)
        # entries grouped by cell, so per-cell sums are one reduceat over contiguous runs
        self.order = np.argsort(inv, kind="stable")
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        counts = counts.astype(float)
        if len(cells) == db.n_beams * db.n_subbands:
            mu, mu2 = db.cells_dbm, db.cells_sq
        else:
            mu, mu2 = db.cells_dbm[cells], db.cells_sq[cells]
        self.mu = mu
        self.fixed = counts @ mu2  # (P,)

    def core(self, x: np.ndarray) -> np.ndarray:
        """(T, n) measurements -> (T, P) residual sums minus each report's ``sum(x^2)``."""
        sums = np.add.reduceat(np.atleast_2d(x)[:, self.order], self.starts, axis=1)
        return self.fixed - 2.0 * (sums @ self.mu)


def localize(db: RfMapDb, report: MeasurementReport, sigma_dbm: float = DEFAULT_SIGMA_DBM,
             delta_dbm: float = DEFAULT_DELTA_DBM) -> LocalizationResult:
    """Exhaustive argmax over retained positions; ties go to the lowest index.

    The argmax is taken on the candidate-dependent term alone, so neither ``delta_dbm``
    nor any constant offset can move it.
    """
    t0 = time.perf_counter()
    _check(db, report)
    if db.n_positions == 0:
        raise ReportError("database has no positions")
    core = _Scanner(db, report.beams, report.subbands).core(report.rss_dbm)[0]
    est = int(np.argmin(core))
    sq = core + float(report.rss_dbm @ report.rss_dbm)
    ll = -sq / (2.0 * sigma_dbm**2) + len(report) * entry_log_constant(sigma_dbm, delta_dbm)
    err = None
    if report.true_position is not None:
        err = float(position_error(db, report.true_position, est))
    return LocalizationResult(
        estimate=est,
        estimate_xyz=tuple(float(v) for v in db.positions[est]),
        log_likelihood=ll,
        error_m=err,
        runtime_s=time.perf_counter() - t0,
        true_position=report.true_position,
    )


def localize_batch(db: RfMapDb, layout: ReportLayout, values: np.ndarray) -> np.ndarray:
    """Estimates for many reports sharing one layout; ``values`` is (T, n)."""
    k, b, _ = layout.columns()
    scanner = _Scanner(db, k, b)
    values = np.atleast_2d(values)
    out = np.empty(len(values), dtype=np.int64)
    step = max(1, _CHUNK_ELEMS // max(1, db.n_positions))
    for s in range(0, len(values), step):
        out[s : s + step] = np.argmin(scanner.core(values[s : s + step]), axis=1)
    return out
