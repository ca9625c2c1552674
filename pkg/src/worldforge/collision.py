"""Convex collision shapes and narrow/broad-phase contact generation.

Sphere/sphere and sphere/box pairs are analytic, box/box uses the
separating-axis test, and anything involving a convex hull goes through
GJK distance (with margin inflation) plus EPA for overlapping cores.
Face-face contacts get a clipped manifold so stacks can rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull as _SciHull

from .geom import quat_to_matrix


@dataclass(frozen=True)
class Sphere:
    radius: float


@dataclass(frozen=True)
class Box:
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "half_extents",
                           tuple(float(x) for x in self.half_extents))


@dataclass
class ConvexHullShape:
    """Convex hull of a point cloud; faces are precomputed for manifolds."""
    points: np.ndarray
    vertices: np.ndarray = field(init=False)
    faces: list[np.ndarray] = field(init=False)          # CCW loops into vertices
    face_normals: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(pts) < 4:
            raise ValueError("convex hull needs >= 4 points")
        hull = _SciHull(pts)
        self.points = pts
        self.vertices = pts[hull.vertices].copy()
        remap = {v: i for i, v in enumerate(hull.vertices)}
        # merge coplanar triangles into polygonal faces
        groups: dict[tuple, list[int]] = {}
        for si, eq in enumerate(hull.equations):
            key = tuple(np.round(eq, 7))
            groups.setdefault(key, []).append(si)
        faces: list[np.ndarray] = []
        normals: list[np.ndarray] = []
        for key, sids in groups.items():
            n = np.array(key[:3])
            n = n / np.linalg.norm(n)
            vids = sorted({remap[v] for si in sids for v in hull.simplices[si]})
            pts_f = self.vertices[vids]
            c = pts_f.mean(axis=0)
            # order CCW around the outward normal
            ref = pts_f[0] - c
            ref = ref - n * np.dot(ref, n)
            if np.linalg.norm(ref) < 1e-12:
                ref = np.array([1.0, 0.0, 0.0])
            ref = ref / max(np.linalg.norm(ref), 1e-30)
            t2 = np.cross(n, ref)
            ang = np.arctan2((pts_f - c) @ t2, (pts_f - c) @ ref)
            order = np.argsort(ang)
            faces.append(np.array([vids[k] for k in order], dtype=np.int32))
            normals.append(n)
        self.faces = faces
        self.face_normals = np.array(normals)


CollisionShape = Sphere | Box | ConvexHullShape


@dataclass
class Contact:
    body_a: int
    body_b: int
    point: np.ndarray
    normal: np.ndarray  # unit, a -> b
    penetration: float
    impulse: float = 0.0


# ----------------------------------------------------------------------
# shape properties

def shape_volume(shape: CollisionShape) -> float:
    if isinstance(shape, Sphere):
        return 4.0 / 3.0 * math.pi * shape.radius**3
    if isinstance(shape, Box):
        hx, hy, hz = shape.half_extents
        return 8.0 * hx * hy * hz
    return float(_SciHull(shape.points).volume)


def shape_inertia(shape: CollisionShape, mass: float) -> np.ndarray:
    """Body-frame inertia tensor about the shape origin's centroid."""
    if isinstance(shape, Sphere):
        i = 0.4 * mass * shape.radius**2
        return np.diag([i, i, i])
    if isinstance(shape, Box):
        hx, hy, hz = shape.half_extents
        return np.diag([mass / 3.0 * (hy * hy + hz * hz),
                        mass / 3.0 * (hx * hx + hz * hz),
                        mass / 3.0 * (hx * hx + hy * hy)])
    return hull_inertia(shape.vertices, shape.faces, mass)


def hull_inertia(vertices: np.ndarray, faces: list[np.ndarray], mass: float) -> np.ndarray:
    """Inertia of a solid convex polyhedron about its centroid.

    Tetrahedralizes each face against the origin; uses the second-moment
    identity for a tetra (0,a,b,c): int x x^T = (V/20)(aa^T+bb^T+cc^T+ss^T).
    """
    C = np.zeros((3, 3))
    vol = 0.0
    com = np.zeros(3)
    for face in faces:
        pts = vertices[face]
        for k in range(1, len(pts) - 1):
            a, b, c = pts[0], pts[k], pts[k + 1]
            det = float(np.dot(a, np.cross(b, c)))
            v = det / 6.0
            vol += v
            com += v * (a + b + c) / 4.0
            s = a + b + c
            C += (v / 20.0) * (np.outer(a, a) + np.outer(b, b)
                               + np.outer(c, c) + np.outer(s, s))
    if vol <= 0:
        raise ValueError("hull volume not positive; check face winding")
    com /= vol
    density = mass / vol
    C *= density
    # shift second moment to the centroid, then I = tr(C) Id - C
    C -= mass * np.outer(com, com)
    return np.trace(C) * np.eye(3) - C


def shape_aabb(shape: CollisionShape, position: np.ndarray,
               orientation: np.ndarray, margin: float = 0.0):
    p = np.asarray(position, dtype=float)
    if isinstance(shape, Sphere):
        r = shape.radius + margin
        return p - r, p + r
    m = quat_to_matrix(orientation)
    if isinstance(shape, Box):
        h = np.abs(m) @ np.asarray(shape.half_extents, dtype=float)
        return p - h - margin, p + h + margin
    w = shape.vertices @ m.T + p
    return w.min(axis=0) - margin, w.max(axis=0) + margin


# ----------------------------------------------------------------------
# support functions (world space, cores only: sphere core is its center)

def _support_world(shape: CollisionShape, m: np.ndarray, p: np.ndarray,
                   d: np.ndarray) -> np.ndarray:
    if isinstance(shape, Sphere):
        return p
    dl = m.T @ d
    if isinstance(shape, Box):
        h = np.asarray(shape.half_extents)
        local = np.where(dl >= 0, h, -h)
        return m @ local + p
    idx = int(np.argmax(shape.vertices @ dl))
    return m @ shape.vertices[idx] + p


def _core_radius(shape: CollisionShape) -> float:
    return shape.radius if isinstance(shape, Sphere) else 0.0


# ----------------------------------------------------------------------
# GJK distance with witness points

def _closest_simplex(simplex: list[np.ndarray]):
    """Closest point to origin on a 1-3 vertex simplex.

    Returns (point, barycentric weights, kept indices).  Tetrahedra are
    handled by the caller (origin-containment test).
    """
    if len(simplex) == 1:
        return simplex[0], [1.0], [0]
    if len(simplex) == 2:
        a, b = simplex
        ab = b - a
        t = float(np.dot(-a, ab) / max(np.dot(ab, ab), 1e-300))
        if t <= 0.0:
            return a, [1.0], [0]
        if t >= 1.0:
            return b, [1.0], [1]
        return a + t * ab, [1.0 - t, t], [0, 1]
    a, b, c = simplex
    ab, ac = b - a, c - a
    ap = -a
    d1, d2 = float(np.dot(ab, ap)), float(np.dot(ac, ap))
    if d1 <= 0.0 and d2 <= 0.0:
        return a, [1.0], [0]
    bp = -b
    d3, d4 = float(np.dot(ab, bp)), float(np.dot(ac, bp))
    if d3 >= 0.0 and d4 <= d3:
        return b, [1.0], [1]
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        return a + t * ab, [1.0 - t, t], [0, 1]
    cp = -c
    d5, d6 = float(np.dot(ab, cp)), float(np.dot(ac, cp))
    if d6 >= 0.0 and d5 <= d6:
        return c, [1.0], [2]
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        return a + t * ac, [1.0 - t, t], [0, 2]
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + t * (c - b), [1.0 - t, t], [1, 2]
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w, [1.0 - v - w, v, w], [0, 1, 2]


def _origin_in_tetra(simplex: list[np.ndarray]) -> bool:
    a, b, c, d = simplex

    def same_side(p0, p1, p2, p3) -> bool:
        n = np.cross(p1 - p0, p2 - p0)
        return np.dot(n, p3 - p0) * np.dot(n, -p0) >= 0.0

    return (same_side(a, b, c, d) and same_side(b, c, d, a)
            and same_side(c, d, a, b) and same_side(d, a, b, c))


def gjk(shape_a, m_a, p_a, shape_b, m_b, p_b, max_iter: int = 64):
    """Distance between convex cores.

    Returns (distance, point_on_a, point_on_b, minkowski_simplex) with
    distance 0 when the cores overlap; the simplex then seeds EPA.
    """
    d = p_b - p_a
    if np.dot(d, d) < 1e-20:
        d = np.array([1.0, 0.0, 0.0])
    sa = _support_world(shape_a, m_a, p_a, d)
    sb = _support_world(shape_b, m_b, p_b, -d)
    w = sa - sb
    simplex = [w]
    wit_a, wit_b = [sa], [sb]
    v = w
    for _ in range(max_iter):
        vlen2 = float(np.dot(v, v))
        if vlen2 < 1e-24:
            return 0.0, None, None, (simplex, wit_a, wit_b)
        d = -v
        sa = _support_world(shape_a, m_a, p_a, d)
        sb = _support_world(shape_b, m_b, p_b, -d)
        w = sa - sb
        # no meaningful progress toward the origin: converged
        if vlen2 - float(np.dot(v, w)) <= 1e-12 * max(vlen2, 1.0):
            break
        simplex.append(w)
        wit_a.append(sa)
        wit_b.append(sb)
        if len(simplex) == 4:
            if _origin_in_tetra(simplex):
                return 0.0, None, None, (simplex, wit_a, wit_b)
            # drop the vertex farthest from the origin-closest sub-simplex
            best = None
            for drop in range(4):
                sub = [simplex[i] for i in range(4) if i != drop]
                pt, lam, kept = _closest_simplex(sub)
                dist2 = float(np.dot(pt, pt))
                if best is None or dist2 < best[0]:
                    best = (dist2, drop, pt, lam, kept)
            _, drop, pt, lam, kept = best
            idx = [i for i in range(4) if i != drop]
            simplex = [simplex[idx[k]] for k in kept]
            wit_a = [wit_a[idx[k]] for k in kept]
            wit_b = [wit_b[idx[k]] for k in kept]
            v = pt
        else:
            pt, lam, kept = _closest_simplex(simplex)
            simplex = [simplex[k] for k in kept]
            wit_a = [wit_a[k] for k in kept]
            wit_b = [wit_b[k] for k in kept]
            v = pt
    pt, lam, kept = _closest_simplex(simplex)
    pa = sum(l * wit_a[k] for l, k in zip(lam, kept))
    pb = sum(l * wit_b[k] for l, k in zip(lam, kept))
    dist = float(np.linalg.norm(pt))
    return dist, pa, pb, (simplex, wit_a, wit_b)


def epa(shape_a, m_a, p_a, shape_b, m_b, p_b, seed_simplex,
        max_iter: int = 64, tol: float = 1e-10):
    """Penetration normal/depth for overlapping cores (expanding polytope).

    Normal points from a toward b; returns (normal, depth, point).
    """
    simplex, wit_a, wit_b = seed_simplex
    verts = [np.asarray(w, dtype=float) for w in simplex]
    va = list(wit_a)
    vb = list(wit_b)
    # grow a degenerate seed into a tetrahedron
    axes = [np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]), np.array([0, 1.0, 0]),
            np.array([0, -1.0, 0]), np.array([0, 0, 1.0]), np.array([0, 0, -1.0])]
    ai = 0
    while len(verts) < 4 and ai < len(axes):
        d = axes[ai]
        ai += 1
        sa = _support_world(shape_a, m_a, p_a, d)
        sb = _support_world(shape_b, m_b, p_b, -d)
        w = sa - sb
        if all(np.linalg.norm(w - u) > 1e-12 for u in verts):
            # reject points coplanar/collinear with the current seed
            if len(verts) == 3:
                n = np.cross(verts[1] - verts[0], verts[2] - verts[0])
                if abs(np.dot(n, w - verts[0])) < 1e-12:
                    continue
            if len(verts) == 2:
                t = verts[1] - verts[0]
                if np.linalg.norm(np.cross(t, w - verts[0])) < 1e-12:
                    continue
            verts.append(w)
            va.append(sa)
            vb.append(sb)
    if len(verts) < 4:
        n = p_b - p_a
        nn = np.linalg.norm(n)
        n = n / nn if nn > 1e-12 else np.array([0.0, 0.0, 1.0])
        return n, 0.0, (p_a + p_b) / 2.0

    faces: list[tuple[int, int, int]] = [(0, 1, 2), (0, 2, 3), (0, 3, 1), (1, 3, 2)]

    def face_data(f):
        a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
        n = np.cross(b - a, c - a)
        ln = np.linalg.norm(n)
        if ln < 1e-30:
            return None
        n = n / ln
        dist = float(np.dot(n, a))
        if dist < 0:
            return (f[0], f[2], f[1]), -n, -dist
        return f, n, dist

    # orient all faces outward (origin inside)
    oriented = []
    for f in faces:
        fd = face_data(f)
        if fd:
            oriented.append(fd)
    for _ in range(max_iter):
        oriented.sort(key=lambda t: t[2])
        f, n, dist = oriented[0]
        sa = _support_world(shape_a, m_a, p_a, n)
        sb = _support_world(shape_b, m_b, p_b, -n)
        w = sa - sb
        grow = float(np.dot(n, w)) - dist
        if grow < tol:
            # witness: project origin on the face, combine barycentrics
            a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
            pt, lam, kept = _closest_simplex([a, b, c])
            ids = [f[k] for k in kept]
            pa = sum(l * va[i] for l, i in zip(lam, ids))
            pb = sum(l * vb[i] for l, i in zip(lam, ids))
            return n, dist, (pa + pb) / 2.0
        wi = len(verts)
        verts.append(w)
        va.append(sa)
        vb.append(sb)
        # remove faces visible from w, collect horizon edges
        vis_idx = {i for i, t in enumerate(oriented)
                   if np.dot(t[1], w - verts[t[0][0]]) > 1e-12}
        if not vis_idx:
            return n, dist, (sa + sb) / 2.0
        visible = [oriented[i] for i in sorted(vis_idx)]
        oriented = [t for i, t in enumerate(oriented) if i not in vis_idx]
        edge_count: dict[tuple[int, int], int] = {}
        for (f2, _, _) in visible:
            for e in ((f2[0], f2[1]), (f2[1], f2[2]), (f2[2], f2[0])):
                key = (min(e), max(e))
                edge_count[key] = edge_count.get(key, 0) + 1
        for (f2, _, _) in visible:
            for e in ((f2[0], f2[1]), (f2[1], f2[2]), (f2[2], f2[0])):
                if edge_count[(min(e), max(e))] == 1:
                    fd = face_data((e[0], e[1], wi))
                    if fd:
                        oriented.append(fd)
        if not oriented:
            return n, dist, (sa + sb) / 2.0
    oriented.sort(key=lambda t: t[2])
    f, n, dist = oriented[0]
    a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
    pt, lam, kept = _closest_simplex([a, b, c])
    ids = [f[k] for k in kept]
    pa = sum(l * va[i] for l, i in zip(lam, ids))
    pb = sum(l * vb[i] for l, i in zip(lam, ids))
    return n, dist, (pa + pb) / 2.0


# ----------------------------------------------------------------------
# analytic narrow phases

def _contact_sphere_sphere(a, b) -> list[Contact]:
    ra = a.shape.radius + a.collision_margin
    rb = b.shape.radius + b.collision_margin
    d = b.position - a.position
    dist = float(np.linalg.norm(d))
    pen = ra + rb - dist
    if pen < 0.0:
        return []
    n = d / dist if dist > 1e-12 else np.array([0.0, 0.0, 1.0])
    point = a.position + n * (a.shape.radius + (dist - a.shape.radius - b.shape.radius) / 2)
    return [Contact(a.body_id, b.body_id, point, n, pen)]


def _contact_sphere_box(a, b, flipped: bool) -> list[Contact]:
    """a is the sphere, b the box; flipped means the caller swapped them."""
    m = quat_to_matrix(b.orientation)
    h = np.asarray(b.shape.half_extents)
    local = m.T @ (a.position - b.position)
    clamped = np.clip(local, -h, h)
    delta = local - clamped
    dist2 = float(np.dot(delta, delta))
    r = a.shape.radius + a.collision_margin + b.collision_margin
    if dist2 > 1e-24:
        dist = math.sqrt(dist2)
        pen = r - dist
        if pen < 0.0:
            return []
        n_local = delta / dist
        point_local = clamped
    else:
        # center inside the box: push out along the least-penetrated axis
        gaps = h - np.abs(local)
        axis = int(np.argmin(gaps))
        sign = 1.0 if local[axis] >= 0 else -1.0
        pen = float(gaps[axis]) + r
        n_local = np.zeros(3)
        n_local[axis] = sign
        point_local = local.copy()
        point_local[axis] = sign * h[axis]
    n_world = m @ n_local  # points from box surface toward sphere center
    point = m @ point_local + b.position
    n_ab = n_world if flipped else -n_world
    ids = (b.body_id, a.body_id) if flipped else (a.body_id, b.body_id)
    return [Contact(ids[0], ids[1], point, n_ab, pen)]


# ----------------------------------------------------------------------
# face enumeration for manifold clipping

_BOX_FACE_NORMALS = np.array([
    [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
], dtype=float)


def _box_face(shape: Box, fi: int) -> np.ndarray:
    hx, hy, hz = shape.half_extents
    quads = {
        0: [(hx, -hy, -hz), (hx, hy, -hz), (hx, hy, hz), (hx, -hy, hz)],
        1: [(-hx, hy, -hz), (-hx, -hy, -hz), (-hx, -hy, hz), (-hx, hy, hz)],
        2: [(hx, hy, -hz), (-hx, hy, -hz), (-hx, hy, hz), (hx, hy, hz)],
        3: [(-hx, -hy, -hz), (hx, -hy, -hz), (hx, -hy, hz), (-hx, -hy, hz)],
        4: [(-hx, -hy, hz), (hx, -hy, hz), (hx, hy, hz), (-hx, hy, hz)],
        5: [(-hx, hy, -hz), (hx, hy, -hz), (hx, -hy, -hz), (-hx, -hy, -hz)],
    }
    return np.array(quads[fi], dtype=float)


def _world_faces(body):
    """Iterate (outward unit normal, CCW polygon) of a faceted shape in world."""
    m = quat_to_matrix(body.orientation)
    if isinstance(body.shape, Box):
        for fi in range(6):
            yield m @ _BOX_FACE_NORMALS[fi], _box_face(body.shape, fi) @ m.T + body.position
    else:
        for face, n in zip(body.shape.faces, body.shape.face_normals):
            yield m @ n, body.shape.vertices[face] @ m.T + body.position


def _clip_polygon(poly: np.ndarray, plane_point: np.ndarray,
                  plane_normal: np.ndarray) -> np.ndarray:
    """Keep the side with dot(p - plane_point, plane_normal) >= 0."""
    out = []
    n = len(poly)
    d = (poly - plane_point) @ plane_normal
    for i in range(n):
        j = (i + 1) % n
        di, dj = d[i], d[j]
        if di >= 0:
            out.append(poly[i])
        if (di > 0) != (dj > 0) and abs(di - dj) > 1e-15:
            t = di / (di - dj)
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out) if out else np.zeros((0, 3))


def _face_manifold(ref_body, inc_body, normal_ab, total_margin,
                   flip_ids: bool) -> list[Contact] | None:
    """Clipped face-face manifold; normal_ab points from ref toward inc.

    Returns None when neither body has a face aligned with the normal, in
    which case the caller falls back to a single contact point.
    """
    best_ref = None
    for n, poly in _world_faces(ref_body):
        d = float(np.dot(n, normal_ab))
        if best_ref is None or d > best_ref[0]:
            best_ref = (d, n, poly)
    if best_ref is None or best_ref[0] < 0.98:
        return None
    _, ref_n, ref_poly = best_ref
    best_inc = None
    for n, poly in _world_faces(inc_body):
        d = float(np.dot(n, -normal_ab))
        if best_inc is None or d > best_inc[0]:
            best_inc = (d, n, poly)
    if best_inc is None:
        return None
    _, _, inc_poly = best_inc
    poly = inc_poly
    m = len(ref_poly)
    for i in range(m):
        a, b = ref_poly[i], ref_poly[(i + 1) % m]
        side_n = np.cross(ref_n, b - a)
        ln = np.linalg.norm(side_n)
        if ln < 1e-12:
            continue
        poly = _clip_polygon(poly, a, side_n / ln)
        if len(poly) == 0:
            return None
    contacts = []
    ref_pt = ref_poly[0]
    for p in poly:
        depth = float(np.dot(ref_pt - p, ref_n)) + total_margin
        if depth < 0.0:
            continue
        point = p + ref_n * (float(np.dot(ref_pt - p, ref_n)) / 2.0)
        ids = (inc_body.body_id, ref_body.body_id) if flip_ids \
            else (ref_body.body_id, inc_body.body_id)
        n_out = -normal_ab if flip_ids else normal_ab
        contacts.append(Contact(ids[0], ids[1], point, n_out, depth))
    return contacts or None


def _is_faceted(shape) -> bool:
    return isinstance(shape, (Box, ConvexHullShape))


def _contact_convex_pair(a, b) -> list[Contact]:
    """GJK/EPA narrow phase for any convex pair, margin-inflated."""
    m_a = quat_to_matrix(a.orientation)
    m_b = quat_to_matrix(b.orientation)
    total_margin = (a.collision_margin + b.collision_margin
                    + _core_radius(a.shape) + _core_radius(b.shape))
    dist, pa, pb, seed = gjk(a.shape, m_a, a.position, b.shape, m_b, b.position)
    if dist > 0.0:
        pen = total_margin - dist
        if pen < 0.0:
            return []
        n = (pb - pa) / dist
        sa = pa + n * (_core_radius(a.shape) + a.collision_margin)
        sb = pb - n * (_core_radius(b.shape) + b.collision_margin)
        point = (sa + sb) / 2.0
    else:
        n, core_pen, point = epa(a.shape, m_a, a.position, b.shape, m_b, b.position, seed)
        pen = core_pen + total_margin
    if _is_faceted(a.shape) and _is_faceted(b.shape):
        manifold = _face_manifold(a, b, n, total_margin, flip_ids=False)
        if manifold is None:
            manifold = _face_manifold(b, a, -n, total_margin, flip_ids=True)
        if manifold:
            return manifold
    return [Contact(a.body_id, b.body_id, point, n, pen)]


def narrow_phase(a, b) -> list[Contact]:
    """Contacts between two bodies; normals point from a toward b."""
    sa, sb = a.shape, b.shape
    if isinstance(sa, Sphere) and isinstance(sb, Sphere):
        return _contact_sphere_sphere(a, b)
    if isinstance(sa, Sphere) and isinstance(sb, Box):
        return _contact_sphere_box(a, b, flipped=False)
    if isinstance(sa, Box) and isinstance(sb, Sphere):
        return _contact_sphere_box(b, a, flipped=True)
    return _contact_convex_pair(a, b)


def broad_phase(bodies) -> list[tuple]:
    """Sweep-and-prune on x with full AABB overlap confirmation.

    Bodies are any objects with shape/position/orientation/collision_margin
    and a body_id; returns candidate pairs ordered by (id_a, id_b).
    """
    entries = []
    for body in bodies:
        lo, hi = shape_aabb(body.shape, body.position, body.orientation,
                            body.collision_margin)
        entries.append((float(lo[0]), float(hi[0]), lo, hi, body))
    entries.sort(key=lambda e: (e[0], e[4].body_id))
    pairs = []
    for i in range(len(entries)):
        xlo_i, xhi_i, lo_i, hi_i, bi = entries[i]
        for j in range(i + 1, len(entries)):
            xlo_j, _, lo_j, hi_j, bj = entries[j]
            if xlo_j > xhi_i:
                break
            if (lo_i[1] <= hi_j[1] and lo_j[1] <= hi_i[1]
                    and lo_i[2] <= hi_j[2] and lo_j[2] <= hi_i[2]):
                if bi.body_id < bj.body_id:
                    pairs.append((bi, bj))
                else:
                    pairs.append((bj, bi))
    pairs.sort(key=lambda p: (p[0].body_id, p[1].body_id))
    return pairs
