"""Specular multipath tracing with the image method.

Walls are vertical, so the horizontal part of every path is a 2D image problem and the
ground bounce only folds the height profile.  An image tree is grown once per transmitter
(beam-clipped so that only reachable wall sequences survive) and each receiver is then
answered by back-tracing the tree nodes whose final beam contains it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path as FsPath

import numpy as np

from ._parallel import map_chunks
from .scene import SPEED_OF_LIGHT, PositionGrid, Scene, SceneGeometry

GROUND = -1  # surface id of the ground plane in path signatures
_EPS = 1e-9


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Path:
    gain_db: float
    phase_rad: float
    delay_s: float
    aod_az_deg: float
    aod_el_deg: float
    aoa_az_deg: float
    aoa_el_deg: float
    bounces: int
    surfaces: tuple[int, ...] = ()  # wall ids in bounce order, GROUND for the ground
    vertices: tuple[tuple[float, float, float], ...] = ()  # tx, reflection points..., rx

    @property
    def length_m(self) -> float:
        return self.delay_s * SPEED_OF_LIGHT


@dataclass(frozen=True)
class PathSet:
    tx: tuple[float, float, float]
    rx: tuple[float, float, float]
    paths: tuple[Path, ...]

    def __len__(self) -> int:
        return len(self.paths)

    def arrays(self) -> dict[str, np.ndarray]:
        """Column view of the paths, convenient for vectorised channel synthesis."""
        names = ("gain_db", "phase_rad", "delay_s", "aod_az_deg", "aod_el_deg", "aoa_az_deg", "aoa_el_deg")
        out = {n: np.array([getattr(p, n) for p in self.paths], dtype=float) for n in names}
        out["bounces"] = np.array([p.bounces for p in self.paths], dtype=int)
        return out

    @property
    def has_los(self) -> bool:
        return any(p.bounces == 0 for p in self.paths)


def fspl_db(distance_m, carrier_hz):
    """Friis free-space path loss, 20 log10(4 pi d f / c)."""
    return 20.0 * np.log10(4.0 * np.pi * np.asarray(distance_m) * carrier_hz / SPEED_OF_LIGHT)


# --------------------------------------------------------------------------- #
# image tree
# --------------------------------------------------------------------------- #

def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class ImageTree:
    """Wall-reflection image sources of a 2D transmitter, grouped by depth.

    ``levels[d]`` holds the nodes after ``d`` wall reflections:
      images  (n, d + 1, 2)  source and successive images
      walls   (n, d)         wall index of each reflection
      q0, q1  (n, 2)         lit part of the last wall (the beam window)
    """

    def __init__(self, geom: SceneGeometry, source_xy, max_walls: int):
        self.source = np.asarray(source_xy, dtype=float)
        self.max_walls = max_walls
        self.levels = [
            {
                "images": self.source.reshape(1, 1, 2),
                "walls": np.zeros((1, 0), dtype=int),
                "q0": np.full((1, 2), np.nan),
                "q1": np.full((1, 2), np.nan),
            }
        ]
        for d in range(1, max_walls + 1):
            nxt = self._grow(geom, self.levels[-1], d)
            self.levels.append(nxt)
            if len(nxt["walls"]) == 0:
                break

    @property
    def n_nodes(self) -> int:
        return sum(len(lv["walls"]) for lv in self.levels)

    @staticmethod
    def _grow(geom: SceneGeometry, lv: dict, d: int) -> dict:
        W = geom.n_walls
        S = lv["images"][:, -1, :]  # (n, 2)
        n = len(S)
        if W == 0 or n == 0:
            return {
                "images": np.zeros((0, d + 1, 2)),
                "walls": np.zeros((0, d), dtype=int),
                "q0": np.zeros((0, 2)),
                "q1": np.zeros((0, 2)),
            }
        P0, P1, N = geom.wall_p0, geom.wall_p1, geom.wall_normal
        # source strictly in front of the candidate wall
        keep = np.einsum("nwk,wk->nw", S[:, None, :] - P0[None], N) > _EPS
        if d > 1:
            last = lv["walls"][:, -1]
            keep[np.arange(n), last] = False

        tlo = np.zeros((n, W))
        thi = np.ones((n, W))
        if d > 1:
            Q0, Q1 = lv["q0"], lv["q1"]
            sgn = np.sign(_cross(Q0 - S, Q1 - S))[:, None]
            A = P0[None] - S[:, None]
            B = P1[None] - S[:, None]
            halfplanes = [
                (sgn * _cross((Q0 - S)[:, None], A), sgn * _cross((Q0 - S)[:, None], B)),
                (-sgn * _cross((Q1 - S)[:, None], A), -sgn * _cross((Q1 - S)[:, None], B)),
            ]
            # beyond the window line, on the side away from the image
            m = Q1 - Q0
            nq = np.stack([m[:, 1], -m[:, 0]], axis=1)
            flip = np.sign(np.einsum("nk,nk->n", S - Q0, nq))
            nq = -nq * np.where(flip == 0, 1.0, flip)[:, None]
            fa = np.einsum("nwk,nk->nw", P0[None] - Q0[:, None], nq)
            fb = np.einsum("nwk,nk->nw", P1[None] - Q0[:, None], nq)
            halfplanes.append((fa, fb))
            for fa, fb in halfplanes:
                delta = fb - fa
                with np.errstate(divide="ignore", invalid="ignore"):
                    root = -fa / delta
                rising = delta > 0
                falling = delta < 0
                tlo = np.where(rising, np.maximum(tlo, root), tlo)
                thi = np.where(falling, np.minimum(thi, root), thi)
                keep &= ~((delta == 0) & (fa <= 0))
            keep &= (thi - tlo) > 1e-9

        ni, wi = np.nonzero(keep)
        if len(ni) == 0:
            return {
                "images": np.zeros((0, d + 1, 2)),
                "walls": np.zeros((0, d), dtype=int),
                "q0": np.zeros((0, 2)),
                "q1": np.zeros((0, 2)),
            }
        E = P1[wi] - P0[wi]
        q0 = P0[wi] + tlo[ni, wi][:, None] * E
        q1 = P0[wi] + thi[ni, wi][:, None] * E
        src = S[ni]
        nrm = N[wi]
        dist = np.einsum("nk,nk->n", src - P0[wi], nrm)
        mirrored = src - 2.0 * dist[:, None] * nrm
        images = np.concatenate([lv["images"][ni], mirrored[:, None, :]], axis=1)
        walls = np.concatenate([lv["walls"][ni], wi[:, None]], axis=1)
        return {"images": images, "walls": walls, "q0": q0, "q1": q1}


def image_tree(geom: SceneGeometry, source_xy, max_walls: int) -> ImageTree:
    """Cached per geometry object and source position."""
    cache = geom.__dict__.setdefault("_image_trees", {})
    key = tuple(float(v) for v in source_xy)
    tree = cache.get(key)
    if tree is None or tree.max_walls < max_walls:
        tree = ImageTree(geom, source_xy, max_walls)
        cache[key] = tree
    return tree


# --------------------------------------------------------------------------- #
# per-receiver path search
# --------------------------------------------------------------------------- #

def _candidates(geom: SceneGeometry, lv: dict, d: int, rx2: np.ndarray) -> np.ndarray:
    if d == 0:
        return np.zeros(1, dtype=int)
    last = lv["walls"][:, -1]
    front = np.einsum("nk,nk->n", rx2 - geom.wall_p0[last], geom.wall_normal[last]) > _EPS
    S = lv["images"][:, -1, :]
    Q0, Q1 = lv["q0"], lv["q1"]
    sgn = np.sign(_cross(Q0 - S, Q1 - S))
    r = rx2 - S
    in_cone = (sgn * _cross(Q0 - S, r) >= 0) & (-sgn * _cross(Q1 - S, r) >= 0)
    return np.flatnonzero(front & in_cone)


def _search_level(geom, lv, d, tx, rx, max_depth):
    """Candidate paths using exactly ``d`` wall reflections, before the occlusion test."""
    rx2, tx2 = rx[:2], tx[:2]
    idx = _candidates(geom, lv, d, rx2)
    if len(idx) == 0:
        return []
    m = len(idx)
    images = lv["images"][idx]
    walls = lv["walls"][idx]

    ok = np.ones(m, dtype=bool)
    pts = np.empty((m, d + 2, 2))
    pts[:, 0] = tx2
    pts[:, -1] = rx2
    p = np.broadcast_to(rx2, (m, 2)).copy()
    for j in range(d, 0, -1):
        S = images[:, j]
        w = walls[:, j - 1]
        P0 = geom.wall_p0[w]
        E = geom.wall_p1[w] - P0
        r = p - S
        denom = _cross(r, E)
        safe = np.where(np.abs(denom) > 1e-15, denom, 1.0)
        s = _cross(P0 - S, E) / safe
        u = _cross(P0 - S, r) / safe
        ok &= (np.abs(denom) > 1e-15) & (s > _EPS) & (s < 1 - _EPS) & (u > _EPS) & (u < 1 - _EPS)
        p = S + s[:, None] * r
        pts[:, j] = p
    if not ok.any():
        return []
    idx, walls, pts = idx[ok], walls[ok], pts[ok]
    m = len(idx)

    seg = np.linalg.norm(np.diff(pts, axis=1), axis=2)  # (m, d + 1)
    cum = np.cumsum(seg, axis=1)
    D2 = cum[:, -1]
    tz, rz = float(tx[2]), float(rx[2])
    out = []
    for ground in (False, True):
        if d + ground > max_depth:
            continue
        if ground and tz + rz <= 0:
            continue
        group = _unfold(geom, pts, cum, D2, walls, tz, rz, ground, d)
        if group is not None:
            out.append(group)
    return out


def _unfold(geom, pts, cum, D2, walls, tz, rz, ground, d):
    """Lift 2D candidates to 3D, dropping those whose bounce points miss their face."""
    m = len(pts)
    keep = np.ones(m, dtype=bool)
    z_end = -rz if ground else rz
    inner = cum[:, :-1]  # distance from tx to each wall reflection point, (m, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(D2[:, None] > 0, inner / D2[:, None], 0.0)
    zw = np.abs(tz + (z_end - tz) * frac)
    if d:
        keep &= np.all((zw > _EPS) & (zw < geom.wall_height[walls] - _EPS), axis=1)

    pts3 = np.concatenate([pts, np.empty((m, d + 2, 1))], axis=2)
    pts3[:, 0, 2] = tz
    pts3[:, -1, 2] = rz
    if d:
        pts3[:, 1:-1, 2] = zw

    k = np.zeros(m, dtype=int)
    if ground:
        s_star = D2 * tz / (tz + rz)
        if d:
            keep &= np.all(np.abs(inner - s_star[:, None]) > 1e-9, axis=1)
        k = np.count_nonzero(inner < s_star[:, None], axis=1)  # ground lies on 2D segment k
        start = np.concatenate([np.zeros((m, 1)), cum], axis=1)
        rows = np.arange(m)
        seglen = start[rows, k + 1] - start[rows, k]
        t = np.where(seglen > 0, (s_star - start[rows, k]) / np.where(seglen > 0, seglen, 1.0), 0.0)
        g2 = pts[rows, k] + t[:, None] * (pts[rows, k + 1] - pts[rows, k])
        g3 = np.concatenate([g2, np.zeros((m, 1))], axis=1)
        keep &= ~geom.inside_any(g3)
        col = np.arange(d + 3)[None, :]
        src_idx = np.where(col <= k[:, None], col, col - 1)
        full = pts3[rows[:, None], np.clip(src_idx, 0, d + 1)]
        full[rows, k + 1] = g3
        pts3 = full

    if not keep.any():
        return None
    return {
        "pts3": pts3[keep],
        "walls": walls[keep],
        "k": k[keep],
        "D2": D2[keep],
        "ground": ground,
        "d": d,
        "z_end": z_end,
    }


def _make_paths(geom, group, tz, carrier_hz) -> list[Path]:
    pts3, walls, D2, ground, d = group["pts3"], group["walls"], group["D2"], group["ground"], group["d"]
    if len(pts3) == 0:
        return []
    length = np.sqrt(D2 * D2 + (tz - group["z_end"]) ** 2)
    bounces = d + int(ground)
    loss = geom.wall_loss_db[walls].sum(axis=1) + (geom.ground_loss_db if ground else 0.0)
    gain = -fspl_db(length, carrier_hz) - loss
    delay = length / SPEED_OF_LIGHT
    phase = np.mod(-2.0 * np.pi * carrier_hz * delay + np.pi * bounces + np.pi, 2.0 * np.pi) - np.pi
    dep = pts3[:, 1] - pts3[:, 0]
    arr = pts3[:, -2] - pts3[:, -1]

    paths = []
    for i in range(len(pts3)):
        sig = [int(w) for w in walls[i]]
        if ground:
            sig.insert(int(group["k"][i]), GROUND)
        paths.append(
            Path(
                gain_db=float(gain[i]),
                phase_rad=float(phase[i]),
                delay_s=float(delay[i]),
                aod_az_deg=_az(dep[i]),
                aod_el_deg=_el(dep[i]),
                aoa_az_deg=_az(arr[i]),
                aoa_el_deg=_el(arr[i]),
                bounces=bounces,
                surfaces=tuple(sig),
                vertices=tuple(tuple(float(c) for c in v) for v in pts3[i]),
            )
        )
    return paths


def _az(v) -> float:
    return math.degrees(math.atan2(v[1], v[0]))


def _el(v) -> float:
    return math.degrees(math.atan2(v[2], math.hypot(v[0], v[1])))


def trace_between(scene: Scene, tx, rx, max_depth: int = 5) -> PathSet:
    """All specular paths from ``tx`` to ``rx`` with at most ``max_depth`` bounces."""
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if np.array_equal(tx, rx):
        raise TraceError("transmitter and receiver coincide")
    geom = scene.geometry
    if geom.inside_any(rx)[0]:
        raise TraceError(f"receiver {tuple(rx)} is inside a building")
    tree = image_tree(geom, tx[:2], max_depth)
    groups = []
    for d in range(0, min(max_depth, len(tree.levels) - 1) + 1):
        groups.extend(_search_level(geom, tree.levels[d], d, tx, rx, max_depth))
    paths: list[Path] = []
    if groups:
        # one occlusion query for every segment of every candidate
        a = np.concatenate([g["pts3"][:, :-1].reshape(-1, 3) for g in groups])
        b = np.concatenate([g["pts3"][:, 1:].reshape(-1, 3) for g in groups])
        blocked = geom.occluded(a, b)
        off = 0
        for g in groups:
            m, nv = g["pts3"].shape[:2]
            free = ~blocked[off : off + m * (nv - 1)].reshape(m, nv - 1).any(axis=1)
            off += m * (nv - 1)
            g = {key: (val[free] if isinstance(val, np.ndarray) else val) for key, val in g.items()}
            paths.extend(_make_paths(geom, g, float(tx[2]), scene.carrier_hz))
    paths.sort(key=lambda p: (p.delay_s, p.surfaces))
    return PathSet(tx=tuple(map(float, tx)), rx=tuple(map(float, rx)), paths=tuple(paths))


def trace(scene: Scene, rx, max_depth: int = 5) -> PathSet:
    return trace_between(scene, scene.bs.position, rx, max_depth)


def _trace_chunk(positions, scene, max_depth):
    return [trace(scene, p, max_depth) for p in positions]


def trace_all(scene: Scene, grid: PositionGrid, max_depth: int = 5, workers: int = 1) -> list[PathSet]:
    """One PathSet per retained grid position, in grid order."""
    return map_chunks(_trace_chunk, [tuple(p) for p in grid.positions], workers, extra=(scene, max_depth))


# --------------------------------------------------------------------------- #
# debug dump / import
# --------------------------------------------------------------------------- #

def dump_pathsets(pathsets, path) -> None:
    """JSON-lines, one PathSet per line; also the import format for external tracers."""
    with open(path, "w") as fh:
        for i, ps in enumerate(pathsets):
            rec = {"index": i, "tx": list(ps.tx), "rx": list(ps.rx), "paths": [_path_dict(p) for p in ps.paths]}
            fh.write(json.dumps(rec) + "\n")


def _path_dict(p: Path) -> dict:
    d = asdict(p)
    d["surfaces"] = list(p.surfaces)
    d["vertices"] = [list(v) for v in p.vertices]
    return d


def load_pathsets(path) -> list[PathSet]:
    out = []
    for line in FsPath(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        paths = []
        for d in rec["paths"]:
            d = dict(d)
            d["surfaces"] = tuple(d.get("surfaces", ()))
            d["vertices"] = tuple(tuple(v) for v in d.get("vertices", ()))
            paths.append(Path(**d))
        paths.sort(key=lambda p: (p.delay_s, p.surfaces))
        out.append(PathSet(tx=tuple(rec["tx"]), rx=tuple(rec["rx"]), paths=tuple(paths)))
    return out
