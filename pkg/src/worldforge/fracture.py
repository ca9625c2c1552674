"""Voronoi cell fracture of convex meshes and the contact-impulse trigger.

Cells are built by clipping a convex polytope with bisector half-spaces;
the same clipping machinery intersects cells with the parent mesh.  The
trigger swaps an intact body for its fragments between physics steps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .collision import ConvexHullShape
from .dynamics import RigidBody, UnknownBody, World
from .geom import quat_to_matrix
from .mesh import TriMesh

MIN_FRAGMENT_VOLUME = 1e-9


class DuplicateSeeds(ValueError):
    pass


class NonConvexInput(ValueError):
    pass


@dataclass
class FractureSpec:
    fragment_count: int
    seed: int = 0
    impulse_threshold: float = 0.0
    inherit_velocity: bool = True

    def __post_init__(self):
        if self.fragment_count < 1:
            raise ValueError("fragment_count must be >= 1")
        if self.impulse_threshold < 0:
            raise ValueError("impulse_threshold must be >= 0")


@dataclass
class VoronoiCell:
    seed: np.ndarray
    half_spaces: list[tuple[np.ndarray, float]]  # n . x <= offset
    vertices: np.ndarray


@dataclass
class FractureEvent:
    parent_id: int
    child_ids: list[int]


# ----------------------------------------------------------------------
# convex polytope clipping

@dataclass
class _Polytope:
    vertices: np.ndarray          # (n, 3)
    faces: list[np.ndarray]       # CCW loops seen from outside


def _box_polytope(lo: np.ndarray, hi: np.ndarray) -> _Polytope:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    verts = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    faces = [np.array(f, dtype=np.int32) for f in
             ((0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
              (2, 3, 7, 6), (1, 2, 6, 5), (3, 0, 4, 7))]
    return _Polytope(verts, faces)


def _mesh_polytope(mesh: TriMesh) -> _Polytope:
    hull = ConvexHullShape(mesh.positions)
    return _Polytope(hull.vertices.copy(), [f.copy() for f in hull.faces])


def clip_polytope(poly: _Polytope, normal: np.ndarray, offset: float,
                  eps: float = 1e-9) -> _Polytope | None:
    """Cut a convex polytope by the half-space n.x <= offset.

    Returns None when nothing remains.  The cut cap is rebuilt by angular
    sorting, which is valid because the polytope is convex.
    """
    v = poly.vertices
    d = v @ normal - offset
    if (d <= eps).all():
        return poly
    if (d >= -eps).all():
        return None
    verts: list[np.ndarray] = [p for p in v]
    cut_cache: dict[tuple[int, int], int] = {}

    def cut_point(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        if key not in cut_cache:
            t = d[i] / (d[i] - d[j])
            verts.append(v[i] + t * (v[j] - v[i]))
            cut_cache[key] = len(verts) - 1
        return cut_cache[key]

    new_faces: list[list[int]] = []
    on_plane: set[int] = set(int(i) for i in np.where(np.abs(d) <= eps)[0])
    for face in poly.faces:
        out: list[int] = []
        m = len(face)
        for k in range(m):
            i, j = int(face[k]), int(face[(k + 1) % m])
            di, dj = d[i], d[j]
            if di <= eps:
                out.append(i)
            if (di < -eps and dj > eps) or (di > eps and dj < -eps):
                out.append(cut_point(i, j))
        # dedupe consecutive repeats while preserving order
        dedup: list[int] = []
        for idx in out:
            if not dedup or dedup[-1] != idx:
                dedup.append(idx)
        if len(dedup) > 1 and dedup[0] == dedup[-1]:
            dedup.pop()
        if len(dedup) >= 3:
            new_faces.append(dedup)
            for idx in dedup:
                if idx >= len(v) or abs(d[idx]) <= eps:
                    on_plane.add(idx)
    cap_ids = sorted({i for i in on_plane
                      if any(i in f for f in new_faces) or i >= len(v)})
    varr = np.array(verts)
    if len(cap_ids) >= 3:
        pts = varr[cap_ids]
        c = pts.mean(axis=0)
        ref = pts[0] - c
        ref -= normal * np.dot(ref, normal)
        if np.linalg.norm(ref) > 1e-15:
            ref = ref / np.linalg.norm(ref)
            t2 = np.cross(normal, ref)
            ang = np.arctan2((pts - c) @ t2, (pts - c) @ ref)
            order = np.argsort(ang)
            new_faces.append([cap_ids[k] for k in order])
    if not new_faces:
        return None
    # compact unused vertices
    used = sorted({i for f in new_faces for i in f})
    remap = {old: new for new, old in enumerate(used)}
    return _Polytope(varr[used],
                     [np.array([remap[i] for i in f], dtype=np.int32)
                      for f in new_faces])


def _polytope_mesh(poly: _Polytope, material_id: int = 0) -> TriMesh:
    tris = []
    for face in poly.faces:
        for k in range(1, len(face) - 1):
            tris.append((face[0], face[k], face[k + 1]))
    return TriMesh(poly.vertices.copy(), np.array(tris, dtype=np.int32),
                   material_id=material_id)


def polytope_volume(poly: _Polytope) -> float:
    from .mesh import volume
    return volume(_polytope_mesh(poly))


# ----------------------------------------------------------------------
# voronoi cells

def _bisectors(seeds: np.ndarray, i: int):
    """Half-spaces separating seed i from every other seed."""
    out = []
    for j in range(len(seeds)):
        if j == i:
            continue
        n = seeds[j] - seeds[i]
        ln = np.linalg.norm(n)
        n = n / ln
        off = float(np.dot(n, (seeds[i] + seeds[j]) / 2.0))
        out.append((n, off))
    return out


def voronoi_cells(seeds: np.ndarray, bounds: tuple[np.ndarray, np.ndarray]) -> list[VoronoiCell]:
    """Voronoi decomposition of an axis-aligned box; cells tile it exactly."""
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 3)
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    for i in range(len(seeds)):
        for j in range(i + 1, len(seeds)):
            if np.linalg.norm(seeds[i] - seeds[j]) <= 1e-9:
                raise DuplicateSeeds(f"seeds {i} and {j} coincide")
    if ((seeds < lo - 1e-12) | (seeds > hi + 1e-12)).any():
        raise ValueError("all seeds must lie inside bounds")
    box_planes = [(np.array([1.0, 0, 0]), float(hi[0])),
                  (np.array([-1.0, 0, 0]), float(-lo[0])),
                  (np.array([0, 1.0, 0]), float(hi[1])),
                  (np.array([0, -1.0, 0]), float(-lo[1])),
                  (np.array([0, 0, 1.0]), float(hi[2])),
                  (np.array([0, 0, -1.0]), float(-lo[2]))]
    cells: list[VoronoiCell] = []
    for i in range(len(seeds)):
        poly = _box_polytope(lo, hi)
        planes = _bisectors(seeds, i)
        for n, off in planes:
            poly = clip_polytope(poly, n, off)
            if poly is None:
                break
        if poly is None:
            continue
        cells.append(VoronoiCell(seeds[i].copy(), box_planes + planes,
                                 poly.vertices.copy()))
    return cells


# ----------------------------------------------------------------------
# mesh fracture

def _check_convex(mesh: TriMesh) -> ConvexHullShape:
    from .mesh import volume as mesh_volume
    hull = ConvexHullShape(mesh.positions)
    planes_n = hull.face_normals
    planes_off = np.array([np.dot(n, hull.vertices[f[0]])
                           for n, f in zip(planes_n, hull.faces)])
    # every vertex must lie on the hull boundary (near some face plane)
    depth = (planes_off[None, :] - mesh.positions @ planes_n.T).min(axis=1)
    if depth.max() > 1e-6:
        raise NonConvexInput("mesh has vertices strictly inside its hull")
    hull_vol = polytope_volume(_Polytope(hull.vertices, hull.faces))
    if abs(mesh_volume(mesh) - hull_vol) > 1e-6 * max(hull_vol, 1e-12):
        raise NonConvexInput("mesh volume differs from its hull volume")
    return hull


def _sample_inside(hull: ConvexHullShape, count: int, seed: int) -> np.ndarray:
    gen = seeding.rng(seed, "fracture_seeds")
    lo = hull.vertices.min(axis=0)
    hi = hull.vertices.max(axis=0)
    planes_n = hull.face_normals
    planes_off = np.array([np.dot(n, hull.vertices[f[0]])
                           for n, f in zip(planes_n, hull.faces)])
    out: list[np.ndarray] = []
    guard = 0
    while len(out) < count and guard < 100000:
        guard += 1
        p = lo + gen.random(3) * (hi - lo)
        if (p @ planes_n.T <= planes_off + 1e-12).all():
            if all(np.linalg.norm(p - q) > 1e-9 for q in out):
                out.append(p)
    if len(out) < count:
        raise RuntimeError("seed sampling failed; degenerate mesh bounds?")
    return np.array(out)


def fracture_mesh(mesh: TriMesh, spec: FractureSpec) -> list[TriMesh]:
    """Split a closed convex mesh into Voronoi fragments.

    Seeds are sampled uniformly inside the mesh; each cell is the mesh
    clipped by the bisectors toward every other seed.  Empty intersections
    and slivers below 1e-9 m^3 are dropped, so the output count can be
    less than requested.
    """
    hull = _check_convex(mesh)
    if spec.fragment_count == 1:
        out = mesh.copy()
        return [out]
    seeds = _sample_inside(hull, spec.fragment_count, spec.seed)
    base = _Polytope(hull.vertices.copy(), [f.copy() for f in hull.faces])
    fragments: list[TriMesh] = []
    for i in range(len(seeds)):
        poly = base
        for n, off in _bisectors(seeds, i):
            poly = clip_polytope(poly, n, off)
            if poly is None:
                break
        if poly is None:
            continue
        if polytope_volume(poly) < MIN_FRAGMENT_VOLUME:
            continue
        fragments.append(_polytope_mesh(poly, material_id=mesh.material_id))
    return fragments


def apply_fracture_trigger(world: World, contacts, specs: dict[int, FractureSpec],
                           meshes: dict[int, TriMesh]) -> list[FractureEvent]:
    """Replace bodies whose contact impulse crossed their threshold.

    meshes maps body id -> render mesh in body-local coordinates; fragment
    meshes are added (recentered on their volume centroid) and the parent
    entry removed.  Mutates world and meshes; call between steps only.
    """
    from .mesh import centroid as mesh_centroid
    from .mesh import volume as mesh_volume

    for body_id in specs:
        if body_id not in world.bodies:
            raise UnknownBody(f"fracture spec references missing body {body_id}")
    triggered: list[int] = []
    for c in contacts:
        for body_id in (c.body_a, c.body_b):
            if body_id in specs and body_id not in triggered \
                    and c.impulse > specs[body_id].impulse_threshold:
                triggered.append(body_id)
    events: list[FractureEvent] = []
    for parent_id in triggered:
        spec = specs[parent_id]
        parent = world.bodies[parent_id]
        parent_mesh = meshes[parent_id]
        parent_volume = mesh_volume(parent_mesh)
        fragments = fracture_mesh(parent_mesh, spec)
        child_ids: list[int] = []
        rot = quat_to_matrix(parent.orientation)
        for frag in fragments:
            c_local = mesh_centroid(frag)
            frag_local = frag.copy()
            frag_local.positions = frag.positions - c_local
            try:
                shape = ConvexHullShape(frag_local.positions)
            except Exception:
                continue  # sliver too flat for a hull
            world_centroid = parent.position + rot @ c_local
            frag_volume = mesh_volume(frag_local)
            mass = parent.mass * (frag_volume / parent_volume) \
                if parent.mass > 0 else 0.0
            if spec.inherit_velocity and parent.mass > 0:
                r = world_centroid - parent.position
                vel = parent.linear_velocity + np.cross(parent.angular_velocity, r)
                ang = parent.angular_velocity.copy()
            else:
                vel = np.zeros(3)
                ang = np.zeros(3)
            child_id = world.allocate_id()
            world.add_body(RigidBody(
                body_id=child_id, shape=shape, mass=mass,
                position=world_centroid, orientation=parent.orientation.copy(),
                linear_velocity=vel, angular_velocity=ang,
                restitution=parent.restitution, friction=parent.friction,
                collision_margin=parent.collision_margin))
            meshes[child_id] = frag_local
            child_ids.append(child_id)
        del world.bodies[parent_id]
        del meshes[parent_id]
        events.append(FractureEvent(parent_id, child_ids))
    return events
