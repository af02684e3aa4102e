"""Digital replica of the deployment: buildings, materials, base station and user grid.

Buildings are extruded polygons (vertical walls, flat roof).  Points lying exactly
on a face or edge count as *outside*; segments are tested on the open interval.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
EDGE_EPS = 1e-9  # meters; on-boundary tolerance

Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]


class SceneError(Exception):
    """Base class for scene problems.  ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


@dataclass(frozen=True)
class Material:
    id: str
    reflection_loss_db: float = 6.0
    # Reserved for an angle-dependent (Fresnel) model; unused by the tracer.
    relative_permittivity: float | None = None
    conductivity: float | None = None


@dataclass(frozen=True)
class Building:
    footprint: tuple[Vec2, ...]
    height: float
    material: str


@dataclass(frozen=True)
class ArraySpec:
    n_antennas: int = 64
    spacing_wavelengths: float = 0.5
    boresight_az_deg: float = 0.0


@dataclass(frozen=True)
class BaseStation:
    position: Vec3
    array: ArraySpec
    tx_power_dbm: float = 30.0


@dataclass(frozen=True)
class GridSpec:
    origin: Vec2
    extent: Vec2
    resolution: float
    height: float

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols); rows run along y, cols along x."""
        return _n_cells(self.extent[1], self.resolution), _n_cells(self.extent[0], self.resolution)


def _n_cells(extent: float, res: float) -> int:
    if extent < res:
        return 0
    # round() guards against 180/2 evaluating to 89.999...
    steps = math.floor(round(extent / res, 9))
    return steps + 1


@dataclass(frozen=True)
class Scene:
    buildings: tuple[Building, ...]
    materials: tuple[Material, ...]
    ground_material: str
    bs: BaseStation
    grid: GridSpec
    carrier_hz: float
    bandwidth_hz: float
    subcarrier_hz: float
    subband_hz: float
    name: str = ""

    def material(self, material_id: str) -> Material:
        for m in self.materials:
            if m.id == material_id:
                return m
        raise KeyError(material_id)

    @property
    def n_subbands(self) -> int:
        return int(round(self.bandwidth_hz / self.subband_hz))

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @cached_property
    def geometry(self) -> "SceneGeometry":
        return SceneGeometry(self)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "frequency": {
                "carrier_hz": self.carrier_hz,
                "bandwidth_hz": self.bandwidth_hz,
                "subcarrier_hz": self.subcarrier_hz,
                "subband_hz": self.subband_hz,
            },
            "materials": [
                {
                    "id": m.id,
                    "reflection_loss_db": m.reflection_loss_db,
                    "relative_permittivity": m.relative_permittivity,
                    "conductivity": m.conductivity,
                }
                for m in self.materials
            ],
            "ground": {"material": self.ground_material},
            "buildings": [
                {"footprint": [list(v) for v in b.footprint], "height": b.height, "material": b.material}
                for b in self.buildings
            ],
            "base_station": {
                "position": list(self.bs.position),
                "tx_power_dbm": self.bs.tx_power_dbm,
                "array": {
                    "n_antennas": self.bs.array.n_antennas,
                    "spacing_wavelengths": self.bs.array.spacing_wavelengths,
                    "boresight_az_deg": self.bs.array.boresight_az_deg,
                },
            },
            "grid": {
                "origin": list(self.grid.origin),
                "extent": list(self.grid.extent),
                "resolution": self.grid.resolution,
                "height": self.grid.height,
            },
        }

    def scene_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


SPEED_OF_LIGHT = 299_792_458.0


# --------------------------------------------------------------------------- #
# loading / saving
# --------------------------------------------------------------------------- #

def _get(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise SceneParseError(f"{where}.{key}" if where else key, "missing")
    return d[key]


def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneParseError(where, f"expected a number, got {value!r}")
    return float(value)


def _vec(value, n: int, where: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise SceneParseError(where, f"expected {n} numbers")
    return tuple(_num(v, f"{where}[{i}]") for i, v in enumerate(value))


def scene_from_dict(doc: dict) -> Scene:
    """Build and validate a Scene from its decoded document."""
    if not isinstance(doc, dict):
        raise SceneParseError("<root>", "expected an object")
    version = _get(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise SceneParseError("schema_version", f"unsupported version {version!r}")

    freq = _get(doc, "frequency", "")
    materials = []
    for i, m in enumerate(_get(doc, "materials", "")):
        where = f"materials[{i}]"
        perm = m.get("relative_permittivity") if isinstance(m, dict) else None
        cond = m.get("conductivity") if isinstance(m, dict) else None
        materials.append(
            Material(
                id=str(_get(m, "id", where)),
                reflection_loss_db=_num(m.get("reflection_loss_db", 6.0), f"{where}.reflection_loss_db"),
                relative_permittivity=None if perm is None else _num(perm, f"{where}.relative_permittivity"),
                conductivity=None if cond is None else _num(cond, f"{where}.conductivity"),
            )
        )

    buildings = []
    for i, b in enumerate(_get(doc, "buildings", "")):
        where = f"buildings[{i}]"
        fp = _get(b, "footprint", where)
        if not isinstance(fp, list):
            raise SceneParseError(f"{where}.footprint", "expected a list of [x, y] vertices")
        verts = tuple(_vec(v, 2, f"{where}.footprint[{j}]") for j, v in enumerate(fp))
        if len(verts) >= 3 and _signed_area(verts) < 0:
            verts = tuple(reversed(verts))
        buildings.append(
            Building(
                footprint=verts,
                height=_num(_get(b, "height", where), f"{where}.height"),
                material=str(_get(b, "material", where)),
            )
        )

    bs_doc = _get(doc, "base_station", "")
    arr = _get(bs_doc, "array", "base_station")
    n_ant = _get(arr, "n_antennas", "base_station.array")
    if isinstance(n_ant, bool) or not isinstance(n_ant, int):
        raise SceneParseError("base_station.array.n_antennas", "expected an integer")
    bs = BaseStation(
        position=_vec(_get(bs_doc, "position", "base_station"), 3, "base_station.position"),
        array=ArraySpec(
            n_antennas=n_ant,
            spacing_wavelengths=_num(arr.get("spacing_wavelengths", 0.5), "base_station.array.spacing_wavelengths"),
            boresight_az_deg=_num(arr.get("boresight_az_deg", 0.0), "base_station.array.boresight_az_deg"),
        ),
        tx_power_dbm=_num(bs_doc.get("tx_power_dbm", 30.0), "base_station.tx_power_dbm"),
    )

    g = _get(doc, "grid", "")
    grid = GridSpec(
        origin=_vec(_get(g, "origin", "grid"), 2, "grid.origin"),
        extent=_vec(_get(g, "extent", "grid"), 2, "grid.extent"),
        resolution=_num(_get(g, "resolution", "grid"), "grid.resolution"),
        height=_num(_get(g, "height", "grid"), "grid.height"),
    )

    scene = Scene(
        buildings=tuple(buildings),
        materials=tuple(materials),
        ground_material=str(_get(_get(doc, "ground", ""), "material", "ground")),
        bs=bs,
        grid=grid,
        carrier_hz=_num(_get(freq, "carrier_hz", "frequency"), "frequency.carrier_hz"),
        bandwidth_hz=_num(_get(freq, "bandwidth_hz", "frequency"), "frequency.bandwidth_hz"),
        subcarrier_hz=_num(_get(freq, "subcarrier_hz", "frequency"), "frequency.subcarrier_hz"),
        subband_hz=_num(_get(freq, "subband_hz", "frequency"), "frequency.subband_hz"),
        name=str(doc.get("name", "")),
    )
    validate_scene(scene)
    return scene


def _is_multiple(a: float, b: float) -> bool:
    ratio = a / b
    return abs(ratio - round(ratio)) < 1e-9 * max(1.0, ratio) and round(ratio) >= 1


def validate_scene(scene: Scene) -> None:
    """Raise SceneValidationError on the first violated invariant."""
    for name in ("carrier_hz", "bandwidth_hz", "subcarrier_hz", "subband_hz"):
        if not getattr(scene, name) > 0:
            raise SceneValidationError(f"frequency.{name}", "must be > 0")
    if not _is_multiple(scene.bandwidth_hz, scene.subband_hz):
        raise SceneValidationError("frequency.bandwidth_hz", "must be an integer multiple of subband_hz")
    # Subcarriers are binned into subbands by position, so a subband only needs
    # to hold at least one subcarrier (1 MHz / 15 kHz is not integral).
    if scene.subband_hz < scene.subcarrier_hz:
        raise SceneValidationError("frequency.subband_hz", "must be >= subcarrier_hz")

    ids = [m.id for m in scene.materials]
    if len(set(ids)) != len(ids):
        raise SceneValidationError("materials", "duplicate material id")
    for i, m in enumerate(scene.materials):
        if not m.reflection_loss_db >= 0:
            raise SceneValidationError(f"materials[{i}].reflection_loss_db", "must be >= 0")
    if scene.ground_material not in ids:
        raise SceneValidationError("ground.material", f"unknown material {scene.ground_material!r}")

    for i, b in enumerate(scene.buildings):
        where = f"buildings[{i}]"
        if not b.height > 0:
            raise SceneValidationError(f"{where}.height", "must be > 0")
        if b.material not in ids:
            raise SceneValidationError(f"{where}.material", f"unknown material {b.material!r}")
        if len(b.footprint) < 3:
            raise SceneValidationError(f"{where}.footprint", "needs at least 3 vertices")
        if not _is_simple(b.footprint):
            raise SceneValidationError(f"{where}.footprint", "polygon is self-intersecting or degenerate")

    arr = scene.bs.array
    if arr.n_antennas < 1:
        raise SceneValidationError("base_station.array.n_antennas", "must be >= 1")
    if not arr.spacing_wavelengths > 0:
        raise SceneValidationError("base_station.array.spacing_wavelengths", "must be > 0")
    if scene.bs.position[2] < 0:
        raise SceneValidationError("base_station.position", "must be above ground")
    if point_in_building(scene, scene.bs.position):
        raise SceneValidationError("base_station.position", "inside a building")

    g = scene.grid
    if not g.resolution > 0:
        raise SceneValidationError("grid.resolution", "must be > 0")
    if not (g.extent[0] > 0 and g.extent[1] > 0):
        raise SceneValidationError("grid.extent", "components must be > 0")
    if g.height < 0:
        raise SceneValidationError("grid.height", "must be >= 0")


def load_scene(path: str | Path) -> Scene:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneParseError(str(path), f"malformed scene file: {exc}") from None
    return scene_from_dict(doc)


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2) + "\n")


def bundled_scene_path(name: str = "six_buildings") -> Path:
    return Path(__file__).parent / "data" / f"{name}.scene"


# --------------------------------------------------------------------------- #
# polygon helpers
# --------------------------------------------------------------------------- #

def _signed_area(verts) -> float:
    a = 0.0
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Closed-segment intersection test (collinear overlap included)."""

    def orient(a, b, c):
        v = _cross(b[0] - a[0], b[1] - a[1], c[0] - a[0], c[1] - a[1])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12 and min(a[1], b[1]) - 1e-12 <= c[
            1
        ] <= max(a[1], b[1]) + 1e-12

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def _is_simple(verts) -> bool:
    n = len(verts)
    if abs(_signed_area(verts)) < 1e-12:
        return False
    edges = [(verts[i], verts[(i + 1) % n]) for i in range(n)]
    for a, b in edges:
        if a == b:
            return False
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def points_in_polygon(xy: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Strict interior test for many points.  Points within EDGE_EPS of an edge are outside."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    x, y = xy[:, 0:1], xy[:, 1:2]
    x0, y0 = verts[:, 0], verts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    inside = (np.count_nonzero(straddle & (x < x_cross), axis=1) % 2) == 1

    ex, ey = x1 - x0, y1 - y0
    len2 = ex * ex + ey * ey
    t = np.clip(((x - x0) * ex + (y - y0) * ey) / len2, 0.0, 1.0)
    dx, dy = x - (x0 + t * ex), y - (y0 + t * ey)
    on_edge = np.any(dx * dx + dy * dy <= EDGE_EPS * EDGE_EPS, axis=1)
    return inside & ~on_edge


# --------------------------------------------------------------------------- #
# geometric queries
# --------------------------------------------------------------------------- #

class SceneGeometry:
    """Flattened face arrays used by the occlusion test and the tracer."""

    def __init__(self, scene: Scene):
        self.polygons = [np.asarray(b.footprint, dtype=float) for b in scene.buildings]
        self.heights = np.array([b.height for b in scene.buildings], dtype=float)
        p0, p1, h, owner, loss = [], [], [], [], []
        for bi, b in enumerate(scene.buildings):
            poly = self.polygons[bi]
            mloss = scene.material(b.material).reflection_loss_db
            for i in range(len(poly)):
                p0.append(poly[i])
                p1.append(poly[(i + 1) % len(poly)])
                h.append(b.height)
                owner.append(bi)
                loss.append(mloss)
        self.wall_p0 = np.array(p0, dtype=float).reshape(-1, 2)
        self.wall_p1 = np.array(p1, dtype=float).reshape(-1, 2)
        d = self.wall_p1 - self.wall_p0
        # CCW footprints: outward normal is the edge direction rotated clockwise.
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        self.wall_normal = n / np.where(norm > 0, norm, 1.0)
        self.wall_height = np.array(h, dtype=float)
        self.wall_building = np.array(owner, dtype=int)
        self.wall_loss_db = np.array(loss, dtype=float)
        self.ground_loss_db = scene.material(scene.ground_material).reflection_loss_db
        if self.polygons:
            allv = np.concatenate(self.polygons)
            self.bbox = (allv.min(axis=0), allv.max(axis=0))
        else:
            self.bbox = None

    @property
    def n_walls(self) -> int:
        return len(self.wall_p0)

    def _inside_matrix(self, xy: np.ndarray) -> np.ndarray:
        """(n_points, n_buildings) strict 2D interior test against every footprint at once."""
        x, y = xy[:, 0:1], xy[:, 1:2]
        x0, y0 = self.wall_p0[:, 0], self.wall_p0[:, 1]
        x1, y1 = self.wall_p1[:, 0], self.wall_p1[:, 1]
        straddle = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        crossings = (straddle & (x < x_cross)).astype(np.int64) @ self._onehot
        ex, ey = x1 - x0, y1 - y0
        t = np.clip(((x - x0) * ex + (y - y0) * ey) / self._len2, 0.0, 1.0)
        dx, dy = x - (x0 + t * ex), y - (y0 + t * ey)
        near = (dx * dx + dy * dy <= EDGE_EPS * EDGE_EPS).astype(np.int64) @ self._onehot
        return (crossings % 2 == 1) & (near == 0)

    @cached_property
    def _onehot(self) -> np.ndarray:
        oh = np.zeros((self.n_walls, len(self.polygons)), dtype=np.int64)
        oh[np.arange(self.n_walls), self.wall_building] = 1
        return oh

    @cached_property
    def _len2(self) -> np.ndarray:
        e = self.wall_p1 - self.wall_p0
        return (e * e).sum(axis=1)

    def inside_any(self, pts: np.ndarray) -> np.ndarray:
        """Strictly inside some building volume (2D interior and below the roof)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        if not self.polygons or len(pts) == 0:
            return np.zeros(len(pts), dtype=bool)
        inside = self._inside_matrix(pts[:, :2])
        return np.any(inside & (pts[:, 2:3] < self.heights[None, :]), axis=1)

    def occluded(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Vectorised open-segment occlusion test for segments a[i] -> b[i].

        The segment is cut at every crossing with a footprint edge; on each piece the
        2D inside/outside state is constant, so testing the piece midpoint plus the lower
        of its two end heights decides whether the piece runs through a building.
        """
        a = np.asarray(a, dtype=float).reshape(-1, 3)
        b = np.asarray(b, dtype=float).reshape(-1, 3)
        out = np.minimum(a[:, 2], b[:, 2]) < -EDGE_EPS
        if not self.polygons or len(a) == 0:
            return out
        lo_box, hi_box = self.bbox
        smin = np.minimum(a[:, :2], b[:, :2])
        smax = np.maximum(a[:, :2], b[:, :2])
        todo = ~out & np.all(smax > lo_box, axis=1) & np.all(smin < hi_box, axis=1)
        todo &= np.minimum(a[:, 2], b[:, 2]) < self.heights.max()
        idx = np.flatnonzero(todo)
        if len(idx) == 0:
            return out
        a, d = a[idx], (b - a)[idx]
        e = self.wall_p1 - self.wall_p0
        dx, dy = d[:, 0:1], d[:, 1:2]
        denom = dx * e[:, 1] - dy * e[:, 0]
        wx, wy = self.wall_p0[:, 0] - a[:, 0:1], self.wall_p0[:, 1] - a[:, 1:2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (wx * e[:, 1] - wy * e[:, 0]) / denom
            u = (wx * dy - wy * dx) / denom
        valid = (np.abs(denom) > 1e-15) & (u >= -1e-12) & (u <= 1 + 1e-12) & (t > 0) & (t < 1)
        m = len(a)
        ts = np.concatenate([np.zeros((m, 1)), np.where(valid, t, np.nan), np.ones((m, 1))], axis=1)
        ts.sort(axis=1)  # NaNs sort last
        lo, hi = ts[:, :-1], ts[:, 1:]
        ok = np.isfinite(hi) & (hi - lo > 1e-9)
        mid = np.where(ok, 0.5 * (lo + hi), 0.0)
        mx = a[:, 0:1] + mid * dx
        my = a[:, 1:2] + mid * dy
        inside = self._inside_matrix(np.stack([mx.ravel(), my.ravel()], axis=1)).reshape(m, -1, len(self.polygons))
        z_lo = a[:, 2:3] + lo * d[:, 2:3]
        z_hi = a[:, 2:3] + np.where(ok, hi, 0.0) * d[:, 2:3]
        below = np.minimum(z_lo, z_hi)[:, :, None] < self.heights[None, None, :]
        out[idx] = np.any(ok[:, :, None] & inside & below, axis=(1, 2))
        return out


def point_in_building(scene: Scene, point) -> bool:
    return bool(scene.geometry.inside_any(np.asarray(point, dtype=float))[0])


def segment_occluded(scene: Scene, a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        raise ValueError("segment endpoints coincide")
    return bool(scene.geometry.occluded(a, b)[0])


def building_overlaps(scene: Scene) -> list[tuple[int, int]]:
    """Pairs of buildings whose footprints overlap (permitted, but worth a warning)."""
    pairs = []
    polys = scene.geometry.polygons
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            a, b = polys[i], polys[j]
            if np.any(points_in_polygon(a, b)) or np.any(points_in_polygon(b, a)):
                pairs.append((i, j))
                continue
            hit = any(
                _segments_intersect(tuple(a[k]), tuple(a[(k + 1) % len(a)]), tuple(b[m]), tuple(b[(m + 1) % len(b)]))
                for k in range(len(a))
                for m in range(len(b))
            )
            if hit:
                pairs.append((i, j))
    return pairs


# --------------------------------------------------------------------------- #
# candidate position grid
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class PositionGrid:
    rows: int
    cols: int
    positions: np.ndarray = field(repr=False)  # (n_retained, 3)
    cell_index: np.ndarray = field(repr=False)  # linear cell index of each retained position
    masked: np.ndarray = field(repr=False)  # (rows * cols,) bool, True = inside a building
    all_xyz: np.ndarray = field(repr=False)  # (rows * cols, 3)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def n_masked(self) -> int:
        return int(self.masked.sum())

    def position_index(self, row: int, col: int) -> int:
        """Retained-position index of cell (row, col); raises KeyError for masked cells."""
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise IndexError((row, col))
        cell = row * self.cols + col
        k = int(np.searchsorted(self.cell_index, cell))
        if k >= len(self.cell_index) or self.cell_index[k] != cell:
            raise KeyError(f"cell ({row}, {col}) is masked")
        return k

    def row_col(self, index: int) -> tuple[int, int]:
        cell = int(self.cell_index[index])
        return divmod(cell, self.cols)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x", "y", "z", "masked"])
            for i, (x, y, z) in enumerate(self.all_xyz):
                w.writerow([i, repr(float(x)), repr(float(y)), repr(float(z)), int(self.masked[i])])


def generate_grid(scene: Scene) -> PositionGrid:
    g = scene.grid
    rows, cols = g.shape
    ys = g.origin[1] + g.resolution * np.arange(rows)
    xs = g.origin[0] + g.resolution * np.arange(cols)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    xyz = np.stack([xx.ravel(), yy.ravel(), np.full(rows * cols, g.height)], axis=1)
    masked = np.zeros(rows * cols, dtype=bool)
    for poly in scene.geometry.polygons:
        masked |= points_in_polygon(xyz[:, :2], poly)
    keep = np.flatnonzero(~masked)
    return PositionGrid(rows=rows, cols=cols, positions=xyz[keep], cell_index=keep, masked=masked, all_xyz=xyz)
