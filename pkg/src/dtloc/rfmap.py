"""The fingerprint database: quantized beam x subband RSS for every retained grid position.

Binary layout (all integers little-endian)::

    0        8 bytes   magic  b"DTRFMAP\\0"
    8        uint32    schema version
    12       uint32    header length H
    16       H bytes   UTF-8 JSON header (sorted keys); "arrays" lists name, dtype, shape
    16+H     ...       raw array payloads, C order, in header order
    end-32   32 bytes  SHA-256 of every preceding byte

RSS values are stored as int32 multiples of the quantization step, position-major
``[P, K, B]`` so one candidate's fingerprint is a contiguous block.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ._parallel import map_chunks
from .channel import RSS_FLOOR_DBM, Codebook, dft_codebook, rss_matrix, subband_channels
from .raytrace import trace
from .scene import PositionGrid, Scene, generate_grid

log = logging.getLogger(__name__)

MAGIC = b"DTRFMAP\x00"
SCHEMA_VERSION = 1
QUANT_STEP_DBM = 1e-3
_PREFIX = struct.Struct("<8sII")
_DIGEST = 32


class RfMapError(Exception):
    pass


class RfMapFormatError(RfMapError):
    """Not an RF map file, or a malformed header."""


class RfMapTruncatedError(RfMapFormatError):
    pass


class RfMapVersionError(RfMapError):
    pass


class RfMapChecksumError(RfMapError):
    pass


class SceneHashMismatch(RfMapError):
    def __init__(self, expected: str, found: str):
        super().__init__(f"scene hash mismatch: database {expected[:12]}..., got {found[:12]}...")
        self.expected = expected
        self.found = found


@dataclass(frozen=True, eq=False)
class RfMapDb:
    counts: np.ndarray = field(repr=False)  # (P, K, B) int32, RSS / step
    grid: PositionGrid = field(repr=False)
    n_paths: np.ndarray = field(repr=False)  # (P,) int32
    los: np.ndarray = field(repr=False)  # (P,) bool
    metadata: dict = field(default_factory=dict)
    build_seconds: float | None = field(default=None, compare=False)

    @property
    def step_dbm(self) -> float:
        return float(self.metadata["build"]["quant_step_dbm"])

    @property
    def floor_dbm(self) -> float:
        return float(self.metadata["build"]["floor_dbm"])

    @property
    def scene_hash(self) -> str:
        return self.metadata["scene_hash"]

    @property
    def n_positions(self) -> int:
        return self.counts.shape[0]

    @property
    def n_beams(self) -> int:
        return self.counts.shape[1]

    @property
    def n_subbands(self) -> int:
        return self.counts.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        """(n_beams, n_subbands, n_positions)."""
        return (self.n_beams, self.n_subbands, self.n_positions)

    @property
    def positions(self) -> np.ndarray:
        return self.grid.positions

    @cached_property
    def values_dbm(self) -> np.ndarray:
        """All fingerprints in dBm, (P, K, B)."""
        out = self.counts * self.step_dbm
        out.flags.writeable = False
        return out

    @cached_property
    def cells_dbm(self) -> np.ndarray:
        """Cell-major copy, (K * B, P), row ``k * B + b``; the scanner's working layout."""
        out = np.ascontiguousarray(self.values_dbm.reshape(self.n_positions, -1).T)
        out.flags.writeable = False
        return out

    @cached_property
    def cells_sq(self) -> np.ndarray:
        out = self.cells_dbm * self.cells_dbm
        out.flags.writeable = False
        return out

    @property
    def rss_dbm(self) -> np.ndarray:
        """Tensor view in (beam, subband, position) order."""
        return self.values_dbm.transpose(1, 2, 0)

    def fingerprint(self, p: int) -> np.ndarray:
        if not 0 <= p < self.n_positions:
            raise IndexError(f"position index {p} out of range [0, {self.n_positions})")
        return self.values_dbm[p]

    def fingerprint_at(self, row: int, col: int) -> np.ndarray:
        """Fingerprint of grid cell (row, col); KeyError if the cell is masked."""
        return self.fingerprint(self.grid.position_index(row, col))

    def check_scene(self, scene_hash: str) -> None:
        if scene_hash != self.scene_hash:
            raise SceneHashMismatch(self.scene_hash, scene_hash)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beam", "subband", "position_index", "rss_dbm"])
            step = self.step_dbm
            for k in range(self.n_beams):
                for b in range(self.n_subbands):
                    for p, c in enumerate(self.counts[:, k, b]):
                        w.writerow([k, b, p, f"{c * step:.3f}"])


# --------------------------------------------------------------------------- #
# build
# --------------------------------------------------------------------------- #

def quantize(rss_dbm, step_dbm: float = QUANT_STEP_DBM) -> np.ndarray:
    """Round-half-even to the step grid, as integer counts."""
    return np.rint(np.asarray(rss_dbm, dtype=float) / step_dbm).astype(np.int32)


def _build_chunk(positions, scene, codebook, max_depth, aggregation, floor_dbm, step_dbm):
    out = []
    for xyz in positions:
        ps = trace(scene, xyz, max_depth)
        ch = subband_channels(scene, ps, aggregation=aggregation)
        counts = quantize(rss_matrix(ch, codebook, floor_dbm), step_dbm)
        out.append((counts, len(ps), ps.has_los))
    return out


def build(
    scene: Scene,
    grid: PositionGrid | None = None,
    codebook: Codebook | None = None,
    max_depth: int = 5,
    workers: int = 1,
    aggregation: str = "coherent",
    floor_dbm: float = RSS_FLOOR_DBM,
    step_dbm: float = QUANT_STEP_DBM,
) -> RfMapDb:
    """Trace every retained position, synthesise beam RSS, quantize.  Worker-count invariant."""
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    grid = grid if grid is not None else generate_grid(scene)
    codebook = codebook if codebook is not None else dft_codebook(scene.bs.array.n_antennas)
    if codebook.n_t != scene.bs.array.n_antennas:
        raise ValueError(f"codebook has {codebook.n_t} antennas, array has {scene.bs.array.n_antennas}")
    t0 = time.perf_counter()
    rows = map_chunks(
        _build_chunk,
        [tuple(p) for p in grid.positions],
        workers,
        extra=(scene, codebook, max_depth, aggregation, floor_dbm, step_dbm),
    )
    elapsed = time.perf_counter() - t0
    K, B = codebook.n_beams, scene.n_subbands
    counts = np.stack([r[0] for r in rows]) if rows else np.zeros((0, K, B), np.int32)
    n_paths = np.array([r[1] for r in rows], dtype=np.int32)
    los = np.array([r[2] for r in rows], dtype=bool)
    log.info("built %d positions in %.1f s (%.0f positions/s)", len(rows), elapsed, len(rows) / max(elapsed, 1e-9))
    g = scene.grid
    metadata = {
        "schema_version": SCHEMA_VERSION,
        "scene_hash": scene.scene_hash(),
        "scene_name": scene.name,
        "codebook": codebook.spec(),
        "build": {
            "max_depth": max_depth,
            "aggregation": aggregation,
            "floor_dbm": floor_dbm,
            "quant_step_dbm": step_dbm,
        },
        "grid": {
            "rows": grid.rows,
            "cols": grid.cols,
            "origin": list(g.origin),
            "resolution": g.resolution,
            "height": g.height,
        },
        "carrier_hz": scene.carrier_hz,
        "bs_position": list(scene.bs.position),
    }
    return RfMapDb(counts=counts, grid=grid, n_paths=n_paths, los=los, metadata=metadata, build_seconds=elapsed)


def path_count_histogram(db: RfMapDb) -> dict[int, int]:
    values, freq = np.unique(db.n_paths, return_counts=True)
    return {int(v): int(f) for v, f in zip(values, freq)}


# --------------------------------------------------------------------------- #
# persistence
# --------------------------------------------------------------------------- #

def _arrays(db: RfMapDb) -> list[tuple[str, np.ndarray]]:
    return [
        ("positions", np.ascontiguousarray(db.grid.positions, dtype="<f8")),
        ("cell_index", np.ascontiguousarray(db.grid.cell_index, dtype="<i4")),
        ("n_paths", np.ascontiguousarray(db.n_paths, dtype="<i4")),
        ("los", np.ascontiguousarray(db.los, dtype="u1")),
        ("rss_counts", np.ascontiguousarray(db.counts, dtype="<i4")),
    ]


def to_bytes(db: RfMapDb) -> bytes:
    arrays = _arrays(db)
    header = dict(db.metadata)
    header["arrays"] = [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in arrays]
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join([_PREFIX.pack(MAGIC, SCHEMA_VERSION, len(hbytes)), hbytes] + [a.tobytes() for _, a in arrays])
    return body + hashlib.sha256(body).digest()


def save(db: RfMapDb, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(db))


def _grid_from_header(h: dict, positions: np.ndarray, cell_index: np.ndarray) -> PositionGrid:
    rows, cols = int(h["rows"]), int(h["cols"])
    res = float(h["resolution"])
    ys = h["origin"][1] + res * np.arange(rows)
    xs = h["origin"][0] + res * np.arange(cols)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    all_xyz = np.stack([xx.ravel(), yy.ravel(), np.full(rows * cols, float(h["height"]))], axis=1)
    masked = np.ones(rows * cols, dtype=bool)
    masked[cell_index] = False
    return PositionGrid(rows=rows, cols=cols, positions=positions, cell_index=cell_index, masked=masked, all_xyz=all_xyz)


def from_bytes(blob: bytes, expected_scene_hash: str | None = None) -> RfMapDb:
    if len(blob) < _PREFIX.size:
        raise RfMapTruncatedError("file shorter than the fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise RfMapFormatError("bad magic bytes: not an RF map file")
    if version != SCHEMA_VERSION:
        raise RfMapVersionError(f"schema version {version} not supported (this build reads {SCHEMA_VERSION})")
    if len(blob) < _PREFIX.size + hlen + _DIGEST:
        raise RfMapTruncatedError("file ends inside the header")
    try:
        header = json.loads(blob[_PREFIX.size : _PREFIX.size + hlen].decode("utf-8"))
        specs = header.pop("arrays")
        sizes = [int(np.dtype(s["dtype"]).itemsize * np.prod(s["shape"], dtype=np.int64)) for s in specs]
    except (ValueError, KeyError, TypeError) as exc:
        raise RfMapChecksumError(f"header unreadable ({exc}); file is corrupted") from exc
    expected_len = _PREFIX.size + hlen + sum(sizes) + _DIGEST
    if len(blob) < expected_len:
        raise RfMapTruncatedError(f"file has {len(blob)} bytes, layout needs {expected_len}")
    if len(blob) > expected_len:
        raise RfMapFormatError(f"{len(blob) - expected_len} trailing bytes after the checksum")
    body = blob[:-_DIGEST]
    if hashlib.sha256(body).digest() != blob[-_DIGEST:]:
        raise RfMapChecksumError("SHA-256 checksum mismatch; file is corrupted")

    arrays, off = {}, _PREFIX.size + hlen
    for spec, size in zip(specs, sizes):
        a = np.frombuffer(blob, dtype=np.dtype(spec["dtype"]), count=size // np.dtype(spec["dtype"]).itemsize, offset=off)
        arrays[spec["name"]] = a.reshape(spec["shape"]).astype(a.dtype.newbyteorder("="))
        off += size
    if expected_scene_hash is not None and header["scene_hash"] != expected_scene_hash:
        raise SceneHashMismatch(header["scene_hash"], expected_scene_hash)
    cell_index = arrays["cell_index"].astype(np.int64)
    grid = _grid_from_header(header["grid"], arrays["positions"], cell_index)
    return RfMapDb(
        counts=arrays["rss_counts"].astype(np.int32),
        grid=grid,
        n_paths=arrays["n_paths"].astype(np.int32),
        los=arrays["los"].astype(bool),
        metadata=header,
    )


def load(path: str | Path, expected_scene_hash: str | None = None) -> RfMapDb:
    return from_bytes(Path(path).read_bytes(), expected_scene_hash)


def from_values(
    values_dbm,
    positions=None,
    scene_hash: str = "synthetic",
    step_dbm: float = QUANT_STEP_DBM,
    floor_dbm: float = RSS_FLOOR_DBM,
) -> RfMapDb:
    """Database from an explicit (P, K, B) dBm array, laid out on a single grid row.

    Meant for toy databases and for importing fingerprints produced elsewhere.
    """
    values = np.maximum(np.asarray(values_dbm, dtype=float), floor_dbm)
    if values.ndim != 3:
        raise ValueError("values_dbm must have shape (P, K, B)")
    P = values.shape[0]
    if positions is None:
        positions = np.stack([np.arange(P, dtype=float), np.zeros(P), np.zeros(P)], axis=1)
    positions = np.asarray(positions, dtype=float).reshape(P, 3)
    cell_index = np.arange(P, dtype=np.int64)
    grid = PositionGrid(rows=1, cols=P, positions=positions, cell_index=cell_index,
                        masked=np.zeros(P, dtype=bool), all_xyz=positions.copy())
    metadata = {
        "schema_version": SCHEMA_VERSION,
        "scene_hash": scene_hash,
        "scene_name": "",
        "codebook": {"kind": "external", "n_beams": values.shape[1]},
        "build": {"max_depth": None, "aggregation": None, "floor_dbm": floor_dbm, "quant_step_dbm": step_dbm},
        "grid": {"rows": 1, "cols": P, "origin": [0.0, 0.0], "resolution": 1.0, "height": 0.0},
        "carrier_hz": None,
        "bs_position": None,
    }
    return RfMapDb(counts=quantize(values, step_dbm), grid=grid, n_paths=np.zeros(P, np.int32),
                   los=np.zeros(P, bool), metadata=metadata)
