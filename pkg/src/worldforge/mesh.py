"""Indexed triangle meshes and the handful of operations everything shares.

Positions are (n, 3) float64, triangles (m, 3) int32 with CCW winding seen
from outside.  Normals and UVs are optional per-vertex attributes; a mesh
without normals is flat-shaded from face normals at render time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import quat_to_matrix


@dataclass
class TriMesh:
    positions: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None
    uvs: np.ndarray | None = None
    material_id: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.uvs is not None:
            self.uvs = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 2)

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def copy(self) -> "TriMesh":
        return TriMesh(
            self.positions.copy(), self.triangles.copy(),
            None if self.normals is None else self.normals.copy(),
            None if self.uvs is None else self.uvs.copy(),
            self.material_id,
        )


class InvalidMesh(ValueError):
    pass


def validate(mesh: TriMesh) -> None:
    if mesh.n_triangles and mesh.triangles.max() >= mesh.n_vertices:
        raise InvalidMesh("triangle index out of range")
    if mesh.n_triangles and mesh.triangles.min() < 0:
        raise InvalidMesh("negative triangle index")
    if not np.isfinite(mesh.positions).all():
        raise InvalidMesh("non-finite vertex position")
    if mesh.normals is not None:
        if len(mesh.normals) != mesh.n_vertices:
            raise InvalidMesh("normal count mismatch")
        lens = np.linalg.norm(mesh.normals, axis=1)
        if not np.allclose(lens, 1.0, atol=1e-6):
            raise InvalidMesh("normals not unit length")
    if mesh.uvs is not None and len(mesh.uvs) != mesh.n_vertices:
        raise InvalidMesh("uv count mismatch")


def face_normals(mesh: TriMesh) -> np.ndarray:
    """Unit normals per triangle (zero rows for degenerate triangles)."""
    v0 = mesh.positions[mesh.triangles[:, 0]]
    v1 = mesh.positions[mesh.triangles[:, 1]]
    v2 = mesh.positions[mesh.triangles[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    lens = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, lens, out=np.zeros_like(n), where=lens > 0)


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted per-vertex normals."""
    v0 = mesh.positions[mesh.triangles[:, 0]]
    v1 = mesh.positions[mesh.triangles[:, 1]]
    v2 = mesh.positions[mesh.triangles[:, 2]]
    weighted = np.cross(v1 - v0, v2 - v0)  # magnitude = 2 * area
    acc = np.zeros_like(mesh.positions)
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], weighted)
    lens = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.divide(acc, lens, out=np.zeros_like(acc), where=lens > 0)
    out[(lens == 0).ravel()] = (0.0, 0.0, 1.0)
    return out


def volume(mesh: TriMesh) -> float:
    """Enclosed volume by the divergence theorem; positive for outward normals."""
    v0 = mesh.positions[mesh.triangles[:, 0]]
    v1 = mesh.positions[mesh.triangles[:, 1]]
    v2 = mesh.positions[mesh.triangles[:, 2]]
    return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)


def surface_area(mesh: TriMesh) -> float:
    v0 = mesh.positions[mesh.triangles[:, 0]]
    v1 = mesh.positions[mesh.triangles[:, 1]]
    v2 = mesh.positions[mesh.triangles[:, 2]]
    return float(np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1).sum() / 2.0)


def centroid(mesh: TriMesh) -> np.ndarray:
    """Volume centroid (assumes a closed mesh with outward normals)."""
    v0 = mesh.positions[mesh.triangles[:, 0]]
    v1 = mesh.positions[mesh.triangles[:, 1]]
    v2 = mesh.positions[mesh.triangles[:, 2]]
    det = np.einsum("ij,ij->i", v0, np.cross(v1, v2))
    vol = det.sum() / 6.0
    if abs(vol) < 1e-12:
        return mesh.positions.mean(axis=0)
    c = ((v0 + v1 + v2) * det[:, None]).sum(axis=0) / 24.0
    return c / vol


def transformed(mesh: TriMesh, position=None, orientation=None, scale: float = 1.0) -> TriMesh:
    """Rigid (plus uniform scale) transform of a mesh."""
    pos = mesh.positions * scale
    normals = mesh.normals
    if orientation is not None:
        m = quat_to_matrix(orientation)
        pos = pos @ m.T
        if normals is not None:
            normals = normals @ m.T
    if position is not None:
        pos = pos + np.asarray(position, dtype=float)
    return TriMesh(pos, mesh.triangles.copy(),
                   None if normals is None else normals.copy(),
                   None if mesh.uvs is None else mesh.uvs.copy(),
                   mesh.material_id)


def merged(meshes: list[TriMesh]) -> TriMesh:
    """Concatenate meshes; normals/uvs kept only if every input has them."""
    if not meshes:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32))
    keep_n = all(m.normals is not None for m in meshes)
    keep_uv = all(m.uvs is not None for m in meshes)
    pos, tris, norms, uvs = [], [], [], []
    offset = 0
    for m in meshes:
        pos.append(m.positions)
        tris.append(m.triangles + offset)
        if keep_n:
            norms.append(m.normals)
        if keep_uv:
            uvs.append(m.uvs)
        offset += m.n_vertices
    return TriMesh(np.vstack(pos), np.vstack(tris),
                   np.vstack(norms) if keep_n else None,
                   np.vstack(uvs) if keep_uv else None,
                   meshes[0].material_id)


def aabb(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    if mesh.n_vertices == 0:
        return np.zeros(3), np.zeros(3)
    return mesh.positions.min(axis=0), mesh.positions.max(axis=0)


# ----------------------------------------------------------------------
# primitives

def make_box(half_extents, center=(0.0, 0.0, 0.0)) -> TriMesh:
    hx, hy, hz = np.asarray(half_extents, dtype=float)
    c = np.asarray(center, dtype=float)
    corners = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ]) + c
    # 6 faces, outward winding; duplicated vertices so each face is flat
    faces = [
        (0, 3, 2, 1, (0, 0, -1)),  # bottom
        (4, 5, 6, 7, (0, 0, 1)),   # top
        (0, 1, 5, 4, (0, -1, 0)),
        (2, 3, 7, 6, (0, 1, 0)),
        (1, 2, 6, 5, (1, 0, 0)),
        (3, 0, 4, 7, (-1, 0, 0)),
    ]
    pos, nrm, uv, tris = [], [], [], []
    for a, b, cc, d, n in faces:
        base = len(pos)
        for idx, (u, v) in zip((a, b, cc, d), ((0, 0), (1, 0), (1, 1), (0, 1))):
            pos.append(corners[idx])
            nrm.append(n)
            uv.append((u, v))
        tris.append((base, base + 1, base + 2))
        tris.append((base, base + 2, base + 3))
    return TriMesh(np.array(pos), np.array(tris, dtype=np.int32),
                   np.array(nrm, dtype=float), np.array(uv, dtype=float))


def make_uv_sphere(radius: float, n_seg: int = 12, n_ring: int = 6,
                   center=(0.0, 0.0, 0.0)) -> TriMesh:
    c = np.asarray(center, dtype=float)
    pos, nrm, uv = [], [], []
    for i in range(n_ring + 1):
        theta = np.pi * i / n_ring
        for j in range(n_seg + 1):
            phi = 2 * np.pi * j / n_seg
            n = np.array([np.sin(theta) * np.cos(phi),
                          np.sin(theta) * np.sin(phi),
                          np.cos(theta)])
            pos.append(c + radius * n)
            nrm.append(n if np.linalg.norm(n) > 0 else (0, 0, 1))
            uv.append((j / n_seg, 1.0 - i / n_ring))
    tris = []
    stride = n_seg + 1
    for i in range(n_ring):
        for j in range(n_seg):
            a = i * stride + j
            b = a + 1
            cc = a + stride
            d = cc + 1
            if i > 0:
                tris.append((a, cc, b))
            if i < n_ring - 1:
                tris.append((b, cc, d))
    nrm = np.array(nrm, dtype=float)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return TriMesh(np.array(pos), np.array(tris, dtype=np.int32), nrm,
                   np.array(uv, dtype=float))


def make_cylinder(radius: float, height: float, n_seg: int = 24,
                  center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed cylinder along +z, base at z=0 relative to center."""
    c = np.asarray(center, dtype=float)
    ang = 2 * np.pi * np.arange(n_seg) / n_seg
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.zeros(n_seg)]) + c
    top = np.column_stack([ring, np.full(n_seg, height)]) + c
    pos = np.vstack([bottom, top, [c + (0, 0, 0)], [c + (0, 0, height)]])
    tris = []
    for j in range(n_seg):
        k = (j + 1) % n_seg
        tris.append((j, k, n_seg + j))
        tris.append((k, n_seg + k, n_seg + j))
        tris.append((2 * n_seg, k, j))            # bottom cap (down)
        tris.append((2 * n_seg + 1, n_seg + j, n_seg + k))  # top cap (up)
    return TriMesh(pos, np.array(tris, dtype=np.int32))


def make_icosahedron(radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts = verts / np.linalg.norm(verts[0]) * radius + np.asarray(center, dtype=float)
    tris = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int32)
    return TriMesh(verts, tris)
