"""City geometry from a semantic map.

Buildings are extruded footprints with flat or gable roofs, roads become
flat ribbon meshes with mitered joints, intersections get traffic props,
pathways get street furniture, and flat roofs get seeded clutter.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .geom import (ear_clip, ensure_ccw, oriented_bounding_box, point_in_polygon,
                   point_segment_distance, segment_intersection, signed_area)
from .mesh import TriMesh, transformed
from .osm_ingest import SemanticClass, SemanticMap
from .props import PropKind

ROAD_Z = 0.02
AREA_Z = 0.01
MITER_LIMIT = 4.0
DEFAULT_WIDTHS = {
    SemanticClass.Highway: 12.0,
    SemanticClass.Road: 7.0,
    SemanticClass.PedestrianPath: 2.0,
    SemanticClass.Railway: 3.0,
}
ROAD_CLASSES = (SemanticClass.Road, SemanticClass.Highway)
PATH_SPACING_MEAN = 15.0
ROOF_AREA_PER_PROP = 60.0
DEFAULT_RIDGE_HEIGHT = 2.5
GROUND_MARGIN = 20.0


class DegeneratePolygon(ValueError):
    pass


class MissingProp(KeyError):
    pass


@dataclass
class Placement:
    prop_kind: PropKind
    position: np.ndarray  # (3,)
    yaw: float            # [0, 2pi)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.yaw = float(self.yaw) % (2.0 * math.pi)


@dataclass
class CityScene:
    meshes: list[tuple[TriMesh, str, int]] = field(default_factory=list)
    placements: list[Placement] = field(default_factory=list)
    bounds: tuple[np.ndarray, np.ndarray] = (np.zeros(3), np.zeros(3))


# ----------------------------------------------------------------------
# buildings

def extrude_building(footprint: np.ndarray, height: float, roof: str = "flat",
                     ridge_height: float = 0.0) -> TriMesh:
    """Extrude a CCW footprint into a closed building mesh.

    Flat roofs ear-clip the top polygon; gable roofs (quadrilateral
    footprints only) add a ridge along the longer axis of the oriented
    bounding box.  Non-quad gable requests fall back to flat with a warning.
    """
    poly = ensure_ccw(np.asarray(footprint, dtype=float))
    if height <= 0:
        raise DegeneratePolygon("height must be positive")
    if abs(signed_area(poly)) < 1e-6:
        raise DegeneratePolygon("footprint area below 1e-6 m^2")
    n = len(poly)
    if roof == "gable" and n != 4:
        warnings.warn("gable roof needs a quadrilateral footprint; using flat")
        roof = "flat"
    if roof == "gable" and ridge_height <= 0:
        raise DegeneratePolygon("gable roof requires ridge_height > 0")

    base = np.column_stack([poly, np.zeros(n)])
    top = np.column_stack([poly, np.full(n, height)])
    positions = [base, top]
    tris: list[tuple[int, int, int]] = []
    # walls: CCW footprint seen from outside -> (i, j, j+n) winds outward
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, j, n + j))
        tris.append((i, n + j, n + i))
    # floor: downward
    for (a, b, c) in ear_clip(poly):
        tris.append((c, b, a))

    if roof == "flat":
        for (a, b, c) in ear_clip(poly):
            tris.append((n + a, n + b, n + c))
        pos = np.vstack(positions)
    else:
        _, axes, _ = oriented_bounding_box(poly)
        long_axis = axes[0]
        # ridge endpoints above the midpoints of the two gable-end edges
        edge_mid = [(poly[i] + poly[(i + 1) % 4]) / 2 for i in range(4)]
        edge_dir = [poly[(i + 1) % 4] - poly[i] for i in range(4)]
        alignment = [abs(float(np.dot(d / (np.linalg.norm(d) + 1e-30), long_axis)))
                     for d in edge_dir]
        gable_edges = sorted(np.argsort(alignment)[:2])
        e0, e1 = gable_edges
        r0 = np.array([*edge_mid[e0], height + ridge_height])
        r1 = np.array([*edge_mid[e1], height + ridge_height])
        ridge_base = 2 * n
        positions.append(np.vstack([r0, r1]))
        pos = np.vstack(positions)
        iv0, iv1 = ridge_base, ridge_base + 1
        for i in range(4):
            j = (i + 1) % 4
            a, b = n + i, n + j
            if i == e0:
                tris.append((a, b, iv0))
            elif i == e1:
                tris.append((a, b, iv1))
            else:
                # sloped side: eaves edge up to the ridge segment
                ra = iv0 if _closer_ridge(pos[a], pos[iv0], pos[iv1]) else iv1
                rb = iv0 if _closer_ridge(pos[b], pos[iv0], pos[iv1]) else iv1
                if ra == rb:
                    tris.append((a, b, ra))
                else:
                    tris.append((a, b, rb))
                    tris.append((a, rb, ra))
    return TriMesh(pos, np.array(tris, dtype=np.int32))


def _closer_ridge(p, r0, r1) -> bool:
    return np.linalg.norm(p[:2] - r0[:2]) <= np.linalg.norm(p[:2] - r1[:2])


# ----------------------------------------------------------------------
# roads

def _offset_polyline(line: np.ndarray, offset: float) -> np.ndarray:
    """Offset a polyline sideways with mitered joints (limit 4, then bevel)."""
    n = len(line)
    dirs = line[1:] - line[:-1]
    lens = np.linalg.norm(dirs, axis=1)
    dirs = dirs / np.where(lens[:, None] > 0, lens[:, None], 1.0)
    normals = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)  # left normals
    pts: list[np.ndarray] = [line[0] + normals[0] * offset]
    for i in range(1, n - 1):
        n_in, n_out = normals[i - 1], normals[i]
        m = n_in + n_out
        mlen = np.linalg.norm(m)
        if mlen < 1e-12:  # 180 degree turnback: bevel with both normals
            pts.append(line[i] + n_in * offset)
            pts.append(line[i] + n_out * offset)
            continue
        m = m / mlen
        cos_half = float(np.dot(m, n_out))
        miter_len = 1.0 / max(cos_half, 1e-9)
        if miter_len > MITER_LIMIT:
            pts.append(line[i] + n_in * offset)
            pts.append(line[i] + n_out * offset)
        else:
            pts.append(line[i] + m * miter_len * offset)
    pts.append(line[-1] + normals[-1] * offset)
    return np.array(pts)


def ribbon_mesh(line: np.ndarray, width: float, z: float = ROAD_Z) -> TriMesh:
    """Flat ribbon of the given width centered on the polyline."""
    left = _offset_polyline(line, width / 2.0)
    right = _offset_polyline(line, -width / 2.0)
    # bevels may give the sides different vertex counts; resample the
    # shorter side is avoided by pairing via shared source vertex counts
    nl, nr = len(left), len(right)
    if nl != nr:
        # pair by normalized arc length
        def resample(side, m):
            seg = np.linalg.norm(np.diff(side, axis=0), axis=1)
            t = np.concatenate([[0.0], np.cumsum(seg)])
            t = t / (t[-1] if t[-1] > 0 else 1.0)
            ti = np.linspace(0.0, 1.0, m)
            out = np.empty((m, 2))
            for k in range(2):
                out[:, k] = np.interp(ti, t, side[:, k])
            return out
        m = max(nl, nr)
        left, right = resample(left, m), resample(right, m)
    m = len(left)
    pos = np.vstack([np.column_stack([left, np.full(m, z)]),
                     np.column_stack([right, np.full(m, z)])])
    tris = []
    for i in range(m - 1):
        a, b = i, i + 1
        c, d = m + i, m + i + 1
        tris.append((a, c, b))
        tris.append((b, c, d))
    return TriMesh(pos, np.array(tris, dtype=np.int32))


def way_width(way) -> float:
    if way.width is not None:
        return float(way.width)
    return DEFAULT_WIDTHS.get(way.sem_class, 4.0)


def build_roads(smap: SemanticMap) -> list[tuple[TriMesh, str]]:
    """Ribbon meshes for every road/highway/path way, with class labels."""
    out: list[tuple[TriMesh, str]] = []
    for way in smap.ways:
        if way.sem_class not in (*ROAD_CLASSES, SemanticClass.PedestrianPath):
            continue
        if len(way.polyline) < 2:
            continue
        out.append((ribbon_mesh(way.polyline, way_width(way)),
                    way.sem_class.value))
    return out


# ----------------------------------------------------------------------
# intersections

def detect_intersections(smap: SemanticMap, merge_radius: float = 0.5) -> list[np.ndarray]:
    """Shared vertices and transversal crossings of road/highway ways.

    Duplicates within merge_radius are merged to their centroid.  The result
    is sorted by (x, y) so downstream seeding is order-independent.
    """
    roads = [w for w in smap.ways if w.sem_class in ROAD_CLASSES]
    raw: list[np.ndarray] = []
    # (a) vertices shared between >= 2 distinct ways
    seen: dict[tuple[int, int], set[int]] = {}
    for wi, way in enumerate(roads):
        for p in way.polyline:
            key = (round(p[0] * 1e6), round(p[1] * 1e6))
            seen.setdefault(key, set()).add(wi)
    for key, owners in seen.items():
        if len(owners) >= 2:
            raw.append(np.array([key[0] * 1e-6, key[1] * 1e-6]))
    # (b) transversal segment crossings between different ways
    for i in range(len(roads)):
        for j in range(i + 1, len(roads)):
            a, b = roads[i].polyline, roads[j].polyline
            for s in range(len(a) - 1):
                for t in range(len(b) - 1):
                    p = segment_intersection(a[s], a[s + 1], b[t], b[t + 1])
                    if p is not None:
                        raw.append(p)
    # merge within radius
    merged_pts: list[list[np.ndarray]] = []
    for p in raw:
        for group in merged_pts:
            if np.linalg.norm(group[0] - p) <= merge_radius:
                group.append(p)
                break
        else:
            merged_pts.append([p])
    centers = [np.mean(g, axis=0) for g in merged_pts]
    centers.sort(key=lambda c: (c[0], c[1]))
    return centers


# ----------------------------------------------------------------------
# prop scattering

def _polygon_inner_sample(gen, poly: np.ndarray, margin: float,
                          attempts: int = 200) -> np.ndarray | None:
    lo = poly.min(axis=0)
    hi = poly.max(axis=0)
    for _ in range(attempts):
        p = lo + gen.random(2) * (hi - lo)
        if not point_in_polygon(p, poly):
            continue
        d = min(point_segment_distance(p, poly[i], poly[(i + 1) % len(poly)])
                for i in range(len(poly)))
        if d >= margin:
            return p
    return None


def scatter_props(smap: SemanticMap, intersections: list[np.ndarray],
                  seed: int) -> list[Placement]:
    """Seeded prop placement; fully determined by (map, intersections, seed).

    Traffic lights / stop signs at intersection corners, street furniture
    along pedestrian pathways at Poisson spacing, and roof clutter on flat
    building roofs.  Each entity draws from its own keyed stream so adding
    one footprint never reshuffles other placements.
    """
    placements: list[Placement] = []
    roads = [w for w in smap.ways if w.sem_class in ROAD_CLASSES]

    # 1. traffic props at intersection corners, offset 4 m along each incident way
    for idx, center in enumerate(intersections):
        gen = seeding.rng(seed, "intersection", idx)
        for way in roads:
            line = way.polyline
            # walk the way to find where it passes the intersection
            for si in range(len(line) - 1):
                a, b = line[si], line[si + 1]
                seg = b - a
                seg_len = np.linalg.norm(seg)
                if seg_len < 1e-12:
                    continue
                t = float(np.clip(np.dot(center - a, seg) / seg_len**2, 0.0, 1.0))
                close = np.linalg.norm(a + t * seg - center) < 1e-6
                if not close:
                    continue
                hit = a + t * seg
                for direction in (seg / seg_len, -seg / seg_len):
                    # only place where the way actually continues
                    end = line[-1] if direction @ seg > 0 else line[0]
                    if np.linalg.norm(end - hit) < 1.0:
                        continue
                    kind = PropKind.TrafficLight if gen.random() < 0.5 else PropKind.StopSign
                    p2 = hit + direction * 4.0
                    yaw = math.atan2(-direction[1], -direction[0])
                    placements.append(Placement(kind, np.array([p2[0], p2[1], 0.0]), yaw))
                break  # one pass point per way is enough

    # 2. street furniture along pedestrian pathways
    furniture = (PropKind.Tree, PropKind.Bench, PropKind.StreetLight)
    for wi, way in enumerate(smap.ways):
        if way.sem_class is not SemanticClass.PedestrianPath:
            continue
        gen = seeding.rng(seed, "path", wi)
        line = way.polyline
        seg_vecs = line[1:] - line[:-1]
        seg_lens = np.linalg.norm(seg_vecs, axis=1)
        total = float(seg_lens.sum())
        s = float(gen.exponential(PATH_SPACING_MEAN))
        while s < total:
            # locate arc-length position s
            acc = 0.0
            for k, L in enumerate(seg_lens):
                if acc + L >= s:
                    u = (s - acc) / L if L > 0 else 0.0
                    p = line[k] + u * seg_vecs[k]
                    d = seg_vecs[k] / (L if L > 0 else 1.0)
                    side = 1.0 if gen.random() < 0.5 else -1.0
                    lateral = np.array([-d[1], d[0]]) * side
                    kind = furniture[int(gen.integers(0, len(furniture)))]
                    q = p + lateral * 1.0
                    yaw = math.atan2(-lateral[1], -lateral[0])
                    placements.append(Placement(kind, np.array([q[0], q[1], 0.0]), yaw))
                    break
                acc += L
            s += float(gen.exponential(PATH_SPACING_MEAN))

    # 3. roof clutter on flat building roofs
    roof_kinds = (PropKind.Antenna, PropKind.Vent, PropKind.Chimney)
    for fi, fp in enumerate(smap.footprints):
        if fp.sem_class is not SemanticClass.Building or fp.roof_shape != "flat":
            continue
        gen = seeding.rng(seed, "roof", fi)
        area = abs(signed_area(fp.polygon))
        count = math.ceil(area / ROOF_AREA_PER_PROP)
        for _ in range(count):
            p = _polygon_inner_sample(gen, fp.polygon, margin=1.0)
            if p is None:
                continue
            kind = roof_kinds[int(gen.integers(0, len(roof_kinds)))]
            yaw = float(gen.random() * 2.0 * math.pi)
            placements.append(Placement(kind, np.array([p[0], p[1], fp.height]), yaw))
    return placements


# ----------------------------------------------------------------------
# assembly

def generate_city(smap: SemanticMap, prop_library: dict[PropKind, TriMesh],
                  seed: int) -> CityScene:
    """Compose buildings, roads, area meshes, props and ground into a scene.

    Instance ids are dense 1..N (0 is reserved for background).
    """
    scene = CityScene()
    next_id = 1

    def add(mesh: TriMesh, label: str) -> None:
        nonlocal next_id
        scene.meshes.append((mesh, label, next_id))
        next_id += 1

    for fp in smap.footprints:
        if fp.sem_class is SemanticClass.Building:
            ridge = DEFAULT_RIDGE_HEIGHT if fp.roof_shape == "gable" else 0.0
            add(extrude_building(fp.polygon, fp.height, fp.roof_shape, ridge),
                SemanticClass.Building.value)
        else:
            poly = ensure_ccw(fp.polygon)
            tris = ear_clip(poly)
            if not tris:
                continue
            pos = np.column_stack([poly, np.full(len(poly), AREA_Z)])
            add(TriMesh(pos, np.array(tris, dtype=np.int32)), fp.sem_class.value)

    for mesh, label in build_roads(smap):
        add(mesh, label)

    intersections = detect_intersections(smap)
    placements = scatter_props(smap, intersections, seed)
    scene.placements = placements
    for pl in placements:
        if pl.prop_kind not in prop_library:
            raise MissingProp(f"prop library lacks {pl.prop_kind}")
        proto = prop_library[pl.prop_kind]
        q = np.array([math.cos(pl.yaw / 2), 0.0, 0.0, math.sin(pl.yaw / 2)])
        add(transformed(proto, position=pl.position, orientation=q),
            pl.prop_kind.value)

    # ground plane sized to everything above, plus margin
    if scene.meshes:
        los = np.min([m.positions.min(axis=0) for m, _, _ in scene.meshes], axis=0)
        his = np.max([m.positions.max(axis=0) for m, _, _ in scene.meshes], axis=0)
    else:
        los = np.zeros(3)
        his = np.zeros(3)
    lo2 = los[:2] - GROUND_MARGIN
    hi2 = his[:2] + GROUND_MARGIN
    gpos = np.array([[lo2[0], lo2[1], 0.0], [hi2[0], lo2[1], 0.0],
                     [hi2[0], hi2[1], 0.0], [lo2[0], hi2[1], 0.0]])
    guv = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    ground = TriMesh(gpos, np.array([(0, 1, 2), (0, 2, 3)], dtype=np.int32),
                     np.tile([0.0, 0.0, 1.0], (4, 1)), guv)
    add(ground, "ground")

    lo = np.array([lo2[0], lo2[1], min(0.0, float(los[2]))])
    hi = np.array([hi2[0], hi2[1], max(0.0, float(his[2]))])
    scene.bounds = (lo, hi)
    return scene
