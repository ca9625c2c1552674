"""Asset loading and structural texture variation.

Loads meshes + materials from OBJ/MTL list files and PNG textures, and
produces structural variants by perturbing displacement/normal maps with
seeded Gaussian noise before baking displacement into vertices.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import seeding
from .mesh import TriMesh, vertex_normals


class ObjParseError(ValueError):
    pass


class MtlParseError(ValueError):
    pass


class MissingUVs(ValueError):
    pass


@dataclass
class Image:
    """Float image in [0, 1], row-major (height, width, channels)."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3, 4):
            raise ValueError(f"bad image shape {arr.shape}")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class Material:
    name: str = "default"
    base_color: tuple[float, float, float] = (0.8, 0.8, 0.8)
    albedo_texture: Image | None = None
    displacement_map: Image | None = None
    normal_map: Image | None = None
    displacement_strength: float = 0.1
    normal_strength: float = 1.0


def load_png(path: str | Path) -> Image:
    """Read an 8- or 16-bit PNG into a float image in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype == np.uint8:
        return Image(arr.astype(np.float32) / 255.0)
    if arr.dtype in (np.uint16, np.int32):
        return Image(arr.astype(np.float32) / 65535.0)
    return Image(np.clip(arr.astype(np.float32), 0.0, 1.0))


# ----------------------------------------------------------------------
# Wavefront OBJ / MTL

def _resolve_index(raw: int, count: int, path: Path, line_no: int) -> int:
    idx = raw - 1 if raw > 0 else count + raw
    if not 0 <= idx < count:
        raise ObjParseError(f"{path}:{line_no}: face index {raw} out of range")
    return idx


def load_obj(path: str | Path) -> TriMesh:
    """Parse v/vn/vt/f records; polygon faces are fan-triangulated.

    Handles 1-based and negative indices and the v, v/vt, v//vn, v/vt/vn
    corner forms.  Missing normals are computed area-weighted afterward.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"OBJ file not found: {path}")
    raw_v: list[list[float]] = []
    raw_vn: list[list[float]] = []
    raw_vt: list[list[float]] = []
    corners: dict[tuple[int, int, int], int] = {}
    positions: list[list[float]] = []
    normals: list[list[float]] = []
    uvs: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    any_vn = False
    any_vt = False

    def corner_index(token: str, line_no: int) -> int:
        nonlocal any_vn, any_vt
        parts = token.split("/")
        try:
            vi = _resolve_index(int(parts[0]), len(raw_v), path, line_no)
            ti = ni = -1
            if len(parts) > 1 and parts[1]:
                ti = _resolve_index(int(parts[1]), len(raw_vt), path, line_no)
                any_vt = True
            if len(parts) > 2 and parts[2]:
                ni = _resolve_index(int(parts[2]), len(raw_vn), path, line_no)
                any_vn = True
        except ValueError as exc:
            raise ObjParseError(f"{path}:{line_no}: bad face corner '{token}'") from exc
        key = (vi, ti, ni)
        if key not in corners:
            corners[key] = len(positions)
            positions.append(raw_v[vi])
            uvs.append(raw_vt[ti][:2] if ti >= 0 else [0.0, 0.0])
            normals.append(raw_vn[ni] if ni >= 0 else [0.0, 0.0, 0.0])
        return corners[key]

    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            kind = tokens[0]
            try:
                if kind == "v":
                    raw_v.append([float(t) for t in tokens[1:4]])
                elif kind == "vn":
                    raw_vn.append([float(t) for t in tokens[1:4]])
                elif kind == "vt":
                    raw_vt.append([float(t) for t in tokens[1:3]])
                elif kind == "f":
                    if len(tokens) < 4:
                        raise ObjParseError(f"{path}:{line_no}: face with <3 corners")
                    ring = [corner_index(t, line_no) for t in tokens[1:]]
                    for k in range(1, len(ring) - 1):
                        tris.append((ring[0], ring[k], ring[k + 1]))
                # o/g/s/usemtl/mtllib: no geometric effect here
            except ObjParseError:
                raise
            except ValueError as exc:
                raise ObjParseError(f"{path}:{line_no}: malformed record") from exc
    mesh = TriMesh(
        np.array(positions, dtype=float).reshape(-1, 3),
        np.array(tris, dtype=np.int32).reshape(-1, 3),
        None,
        np.array(uvs, dtype=float).reshape(-1, 2) if any_vt else None,
    )
    if any_vn:
        n = np.array(normals, dtype=float)
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        missing = (lens == 0).ravel()
        if missing.any():
            n[missing] = vertex_normals(mesh)[missing]
            lens = np.linalg.norm(n, axis=1, keepdims=True)
        mesh.normals = n / np.where(lens > 0, lens, 1.0)
    elif mesh.n_triangles:
        mesh.normals = vertex_normals(mesh)
    return mesh


def save_obj(mesh: TriMesh, path: str | Path) -> None:
    """Full-precision OBJ writer (round-trips bit-exactly through load_obj)."""
    lines = []
    for p in mesh.positions:
        lines.append(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    if mesh.uvs is not None:
        for t in mesh.uvs:
            lines.append(f"vt {float(t[0])!r} {float(t[1])!r}")
    if mesh.normals is not None:
        for n in mesh.normals:
            lines.append(f"vn {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}")
    has_t = mesh.uvs is not None
    has_n = mesh.normals is not None
    for tri in mesh.triangles:
        corner = []
        for i in tri:
            k = i + 1
            if has_t and has_n:
                corner.append(f"{k}/{k}/{k}")
            elif has_t:
                corner.append(f"{k}/{k}")
            elif has_n:
                corner.append(f"{k}//{k}")
            else:
                corner.append(f"{k}")
        lines.append("f " + " ".join(corner))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_mtl(path: str | Path) -> Material:
    """Parse the first material of an MTL file (Kd, map_Kd, map_bump, disp)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"MTL file not found: {path}")
    mat = Material()
    seen = False
    for line_no, line in enumerate(path.read_text(encoding="utf-8",
                                                  errors="replace").splitlines(), 1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        kind = tokens[0].lower()
        if kind == "newmtl":
            if seen:
                break  # only the first material is used
            seen = True
            mat.name = tokens[1] if len(tokens) > 1 else "default"
        elif kind == "kd":
            try:
                mat.base_color = tuple(float(t) for t in tokens[1:4])
            except ValueError as exc:
                raise MtlParseError(f"{path}:{line_no}: bad Kd record") from exc
        elif kind == "map_kd":
            mat.albedo_texture = load_png(path.parent / tokens[-1])
        elif kind in ("map_bump", "bump"):
            mat.normal_map = load_png(path.parent / tokens[-1])
        elif kind == "disp":
            mat.displacement_map = load_png(path.parent / tokens[-1])
    return mat


def load_asset_list(list_path: str | Path) -> list[tuple[TriMesh, Material]]:
    """Load '<obj-path> [mtl-path]' records, one per line, '#' comments."""
    list_path = Path(list_path)
    if not list_path.exists():
        raise FileNotFoundError(f"asset list not found: {list_path}")
    out: list[tuple[TriMesh, Material]] = []
    for line in list_path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        obj_path = list_path.parent / parts[0]
        mesh = load_obj(obj_path)
        if len(parts) > 1:
            material = load_mtl(list_path.parent / parts[1])
        else:
            material = Material()
        mesh.material_id = len(out)
        out.append((mesh, material))
    return out


# ----------------------------------------------------------------------
# structural variation

def perturb_map(image: Image, sigma: float, seed: int) -> Image:
    """Additive per-pixel Gaussian noise, clamped to [0, 1].

    sigma=0 returns the input bit-identically; the same seed always yields
    the same noise field.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return Image(image.data.copy())
    gen = seeding.rng(seed, "perturb_map")
    noise = gen.normal(0.0, sigma, size=image.data.shape)
    return Image(np.clip(image.data.astype(np.float64) + noise, 0.0, 1.0))


def sample_texture_many(image: Image, uvs: np.ndarray) -> np.ndarray:
    """Bilinear texture fetch for an (n, 2) uv batch; repeat wrapping.

    v axis points up: row 0 holds v near 1.  Texel centers sit at
    half-integer pixel coordinates.
    """
    h, w = image.height, image.width
    uv = np.asarray(uvs, dtype=np.float64).reshape(-1, 2)
    u = np.mod(uv[:, 0], 1.0)
    v = np.mod(uv[:, 1], 1.0)
    x = u * w - 0.5
    y = (1.0 - v) * h - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    x0w, x1w = x0 % w, (x0 + 1) % w
    y0w, y1w = y0 % h, (y0 + 1) % h
    d = image.data.astype(np.float64)
    c00 = d[y0w, x0w]
    c10 = d[y0w, x1w]
    c01 = d[y1w, x0w]
    c11 = d[y1w, x1w]
    return (c00 * (1 - fx) * (1 - fy) + c10 * fx * (1 - fy)
            + c01 * (1 - fx) * fy + c11 * fx * fy)


def sample_texture(image: Image, uv: tuple[float, float]) -> np.ndarray:
    return sample_texture_many(image, np.array([uv]))[0]


def apply_displacement(mesh: TriMesh, material: Material) -> TriMesh:
    """Offset vertices along their normals by strength * (D(uv) - 0.5).

    Map value 0.5 is the zero level; normals are recomputed afterward.
    """
    if material.displacement_map is None:
        return mesh.copy()
    if mesh.uvs is None:
        raise MissingUVs("displacement requires a UV-mapped mesh")
    normals = mesh.normals if mesh.normals is not None else vertex_normals(mesh)
    d = sample_texture_many(material.displacement_map, mesh.uvs)
    scalar = d.mean(axis=1) if d.shape[1] > 1 else d[:, 0]
    offset = material.displacement_strength * (scalar - 0.5)
    out = mesh.copy()
    out.positions = mesh.positions + normals * offset[:, None]
    out.normals = vertex_normals(out)
    return out
