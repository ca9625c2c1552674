"""Deterministic CPU renderer.

Produces a per-frame G-buffer (depth, normals, ids, barycentrics) either by
perspective-correct triangle rasterization (pinhole) or per-pixel ray
casting against a BVH (fisheye, equirectangular, distorted pinhole), then
derives every annotation pass from it.  RGB is shaded with direct Lambert
lighting, one shadow ray per pixel per light, a constant ambient term,
fog attenuation and an optional rain overlay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import camera as cam
from . import events as ev
from . import seeding
from .assets import sample_texture_many
from .dataset_io import FrameMeta
from .geom import quat_to_matrix
from .scene_anim import (AmbientLight, PointLight, Scene, SunLight, eval_scalar,
                         semantic_id)

NEAR_PLANE = 1e-4
SHADOW_EPS = 1e-4
GAMMA = 1.0 / 2.2


class ResolutionMismatch(ValueError):
    pass


# ----------------------------------------------------------------------
# weather, lighting presets, blackbody colors

@dataclass
class WeatherState:
    lighting: str = "midday"   # midday | sunset | night
    weather: str = "clear"     # clear | cloudy | rain | fog
    fog_density: float = 0.0   # 1/m
    rain_intensity: float = 0.0

    def __post_init__(self):
        if self.lighting not in ("midday", "sunset", "night"):
            raise ValueError(f"unknown lighting '{self.lighting}'")
        if self.weather not in ("clear", "cloudy", "rain", "fog"):
            raise ValueError(f"unknown weather '{self.weather}'")
        if self.fog_density < 0:
            raise ValueError("fog density must be >= 0")
        if self.weather == "fog" and self.fog_density == 0.0:
            self.fog_density = 0.05
        if self.weather == "rain" and self.rain_intensity == 0.0:
            self.rain_intensity = 0.5


_SKY_COLORS = {
    "midday": (0.45, 0.65, 0.95),
    "sunset": (0.80, 0.45, 0.30),
    "night": (0.01, 0.01, 0.03),
}
_FOG_COLORS = {
    "midday": (0.75, 0.78, 0.82),
    "sunset": (0.70, 0.55, 0.45),
    "night": (0.05, 0.05, 0.08),
}
_AMBIENT = {"midday": 0.10, "sunset": 0.05, "night": 0.02}
_SUN = {"midday": (60.0, 1.0, 5800.0), "sunset": (10.0, 0.35, 3000.0)}


def blackbody_rgb(temperature_k: float) -> np.ndarray:
    """Normalized RGB of a blackbody, tabulated at 100 K and interpolated."""
    t = float(np.clip(temperature_k, _BB_TEMPS[0], _BB_TEMPS[-1]))
    idx = min(int((t - _BB_TEMPS[0]) // 100), len(_BB_TEMPS) - 2)
    u = (t - _BB_TEMPS[idx]) / 100.0
    return _BB_TABLE[idx] * (1.0 - u) + _BB_TABLE[idx + 1] * u


def _blackbody_approx(temp_k: float) -> np.ndarray:
    t = temp_k / 100.0
    if t <= 66.0:
        r = 255.0
        g = 99.4708025861 * math.log(t) - 161.1195681661
    else:
        r = 329.698727446 * (t - 60.0) ** -0.1332047592
        g = 288.1221695283 * (t - 60.0) ** -0.0755148492
    if t >= 66.0:
        b = 255.0
    elif t <= 19.0:
        b = 0.0
    else:
        b = 138.5177312231 * math.log(t - 10.0) - 305.0447927307
    rgb = np.clip([r, g, b], 0.0, 255.0) / 255.0
    return rgb / rgb.max()


_BB_TEMPS = np.arange(1000.0, 12001.0, 100.0)
_BB_TABLE = np.array([_blackbody_approx(t) for t in _BB_TEMPS])


def sun_direction(elevation_deg: float, azimuth_deg: float = 135.0) -> np.ndarray:
    """Light travel direction (from sun into the scene), z-up world."""
    el = math.radians(elevation_deg)
    az = math.radians(azimuth_deg)
    return -np.array([math.cos(el) * math.cos(az),
                      math.cos(el) * math.sin(az),
                      math.sin(el)])


def preset_lights(weather: WeatherState, street_light_positions=()) -> list:
    """Sun/ambient/street lighting for the named conditions."""
    lights: list = []
    cloudy = weather.weather == "cloudy"
    ambient = _AMBIENT[weather.lighting] * (2.0 if cloudy else 1.0)
    lights.append(AmbientLight((ambient, ambient, ambient)))
    if weather.lighting in _SUN:
        elevation, irradiance, temp = _SUN[weather.lighting]
        if cloudy:
            irradiance *= 0.3
        lights.append(SunLight(sun_direction(elevation), irradiance, temp))
    else:
        for p in street_light_positions:
            pos = np.asarray(p, dtype=float) + (0.0, 0.0, 4.5)
            lights.append(PointLight(pos, power=150.0, color=(1.0, 0.85, 0.6)))
    return lights


# ----------------------------------------------------------------------
# world-space triangle soup and BVH

@dataclass
class _Soup:
    pts: np.ndarray        # (T, 3, 3) world positions
    lpts: np.ndarray       # (T, 3, 3) body-local rest positions
    nrm: np.ndarray        # (T, 3, 3) world per-corner normals
    uv: np.ndarray         # (T, 3, 2)
    entity_idx: np.ndarray  # (T,) index into scene.entities
    tri_idx: np.ndarray    # (T,) triangle index within the entity mesh
    instance: np.ndarray   # (T,) uint32
    semantic: np.ndarray   # (T,) uint16


def _assemble_soup(scene: Scene, t: float) -> _Soup:
    pts, lpts, nrm, uv = [], [], [], []
    ent_i, tri_i, inst, sem = [], [], [], []
    for ei, ent in enumerate(scene.entities):
        if not ent.visible_at(t) or ent.mesh.n_triangles == 0:
            continue
        pos, quat = ent.pose.at(t)
        m = quat_to_matrix(quat)
        local = ent.mesh.positions
        world = local @ m.T + pos
        tri = ent.mesh.triangles
        tp = world[tri]                      # (n, 3, 3)
        pts.append(tp)
        lpts.append(local[tri])
        if ent.mesh.normals is not None:
            nrm.append((ent.mesh.normals @ m.T)[tri])
        else:
            fn = np.cross(tp[:, 1] - tp[:, 0], tp[:, 2] - tp[:, 0])
            ln = np.linalg.norm(fn, axis=1, keepdims=True)
            fn = np.divide(fn, ln, out=np.zeros_like(fn), where=ln > 0)
            nrm.append(np.repeat(fn[:, None, :], 3, axis=1))
        if ent.mesh.uvs is not None:
            uv.append(ent.mesh.uvs[tri])
        else:
            uv.append(np.zeros((len(tri), 3, 2)))
        n = len(tri)
        ent_i.append(np.full(n, ei, dtype=np.int32))
        tri_i.append(np.arange(n, dtype=np.int32))
        inst.append(np.full(n, ent.entity_id, dtype=np.uint32))
        sem.append(np.full(n, semantic_id(ent.label), dtype=np.uint16))
    if not pts:
        z3 = np.zeros((0, 3, 3))
        return _Soup(z3, z3.copy(), z3.copy(), np.zeros((0, 3, 2)),
                     np.zeros(0, np.int32), np.zeros(0, np.int32),
                     np.zeros(0, np.uint32), np.zeros(0, np.uint16))
    return _Soup(np.concatenate(pts), np.concatenate(lpts), np.concatenate(nrm),
                 np.concatenate(uv), np.concatenate(ent_i), np.concatenate(tri_i),
                 np.concatenate(inst), np.concatenate(sem))


class BVH:
    """Median-split bounding volume hierarchy with ray-packet traversal."""

    LEAF_SIZE = 8

    def __init__(self, tri_pts: np.ndarray):
        self.tri_pts = tri_pts
        n = len(tri_pts)
        self.order = np.arange(n)
        self.nodes: list[tuple] = []  # (lo, hi, left, right, start, count)
        if n:
            lo = tri_pts.min(axis=1)
            hi = tri_pts.max(axis=1)
            cent = tri_pts.mean(axis=1)
            self._build(0, n, lo, hi, cent)

    def _build(self, start: int, end: int, lo, hi, cent) -> int:
        idx = self.order[start:end]
        node_lo = lo[idx].min(axis=0)
        node_hi = hi[idx].max(axis=0)
        node_id = len(self.nodes)
        self.nodes.append(None)
        if end - start <= self.LEAF_SIZE:
            self.nodes[node_id] = (node_lo, node_hi, -1, -1, start, end - start)
            return node_id
        c = cent[idx]
        axis = int(np.argmax(node_hi - node_lo))
        mid = (end - start) // 2
        part = np.argpartition(c[:, axis], mid)
        self.order[start:end] = idx[part]
        left = self._build(start, start + mid, lo, hi, cent)
        right = self._build(start + mid, end, lo, hi, cent)
        self.nodes[node_id] = (node_lo, node_hi, left, right, start, 0)
        return node_id

    def _leaf_hits(self, node, origins, dirs, active, best_t, best_tri, best_uv,
                   any_hit: bool, blocked):
        _, _, _, _, start, count = node
        tris = self.tri_pts[self.order[start:start + count]]
        ids = self.order[start:start + count]
        o = origins[active]
        d = dirs[active]
        for k in range(len(tris)):
            v0, e1, e2 = tris[k, 0], tris[k, 1] - tris[k, 0], tris[k, 2] - tris[k, 0]
            pvec = np.cross(d, e2[None, :])
            det = pvec @ e1
            ok = np.abs(det) > 1e-14
            inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            tvec = o - v0
            u = np.einsum("ij,ij->i", tvec, pvec) * inv
            qvec = np.cross(tvec, e1)
            v = np.einsum("ij,ij->i", d, qvec) * inv
            t = (qvec @ e2) * inv
            hit = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) \
                & (t > NEAR_PLANE)
            if any_hit:
                hit &= t < best_t[active]
                if hit.any():
                    sel = active[hit]
                    blocked[sel] = True
            else:
                closer = hit & (t < best_t[active])
                if closer.any():
                    sel = active[closer]
                    best_t[sel] = t[closer]
                    best_tri[sel] = ids[k]
                    best_uv[sel, 0] = u[closer]
                    best_uv[sel, 1] = v[closer]

    def _traverse(self, node_id, origins, dirs, inv_dirs, active, best_t,
                  best_tri, best_uv, any_hit, blocked):
        node = self.nodes[node_id]
        lo, hi, left, right, start, count = node
        o = origins[active]
        inv = inv_dirs[active]
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
        tmin = np.minimum(t0, t1).max(axis=1)
        tmax = np.maximum(t0, t1).min(axis=1)
        limit = best_t[active]
        mask = (tmax >= np.maximum(tmin, 0.0)) & (tmin <= limit)
        if any_hit:
            mask &= ~blocked[active]
        if not mask.any():
            return
        sub = active[mask]
        if left < 0:
            self._leaf_hits(node, origins, dirs, sub, best_t, best_tri, best_uv,
                            any_hit, blocked)
            return
        self._traverse(left, origins, dirs, inv_dirs, sub, best_t, best_tri,
                       best_uv, any_hit, blocked)
        self._traverse(right, origins, dirs, inv_dirs, sub, best_t, best_tri,
                       best_uv, any_hit, blocked)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        """Closest hit: returns (t, tri index or -1, uv barycentric pair)."""
        n = len(origins)
        best_t = np.full(n, np.inf)
        best_tri = np.full(n, -1, dtype=np.int64)
        best_uv = np.zeros((n, 2))
        if not self.nodes or n == 0:
            return best_t, best_tri, best_uv
        with np.errstate(divide="ignore"):
            inv_dirs = 1.0 / np.where(np.abs(dirs) < 1e-300, 1e-300, dirs)
        self._traverse(0, origins, dirs, inv_dirs, np.arange(n), best_t,
                       best_tri, best_uv, False, None)
        return best_t, best_tri, best_uv

    def any_hit(self, origins: np.ndarray, dirs: np.ndarray,
                t_max: np.ndarray) -> np.ndarray:
        """True per ray when any triangle lies within (NEAR_PLANE, t_max)."""
        n = len(origins)
        blocked = np.zeros(n, dtype=bool)
        if not self.nodes or n == 0:
            return blocked
        best_t = np.asarray(t_max, dtype=float).copy()
        best_tri = np.full(n, -1, dtype=np.int64)
        best_uv = np.zeros((n, 2))
        with np.errstate(divide="ignore"):
            inv_dirs = 1.0 / np.where(np.abs(dirs) < 1e-300, 1e-300, dirs)
        self._traverse(0, origins, dirs, inv_dirs, np.arange(n), best_t,
                       best_tri, best_uv, True, blocked)
        return blocked


# ----------------------------------------------------------------------
# G-buffer

@dataclass
class GBuffer:
    rig: cam.CameraRig
    t: float
    cam_pos: np.ndarray
    cam_quat: np.ndarray
    depth: np.ndarray        # (h, w) float64, inf for background
    world_pos: np.ndarray    # (h, w, 3)
    normal: np.ndarray       # (h, w, 3) world frame
    uv: np.ndarray           # (h, w, 2)
    instance: np.ndarray     # (h, w) uint32, 0 background
    semantic: np.ndarray     # (h, w) uint16
    entity_idx: np.ndarray   # (h, w) int32, -1 background
    tri_idx: np.ndarray      # (h, w) int32
    bary: np.ndarray         # (h, w, 3)
    soup: _Soup = field(repr=False, default=None)
    bvh: BVH = field(repr=False, default=None)
    depth_is_distance: bool = False

    @property
    def covered(self) -> np.ndarray:
        return self.instance > 0


def _clip_near(cam_pts: np.ndarray):
    """Clip one camera-space triangle against z = NEAR_PLANE.

    Yields (cam_pts (3,3), bary (3,3)) sub-triangles whose bary rows map
    back to the original corners.
    """
    z = cam_pts[:, 2]
    inside = z >= NEAR_PLANE
    if inside.all():
        yield cam_pts, np.eye(3)
        return
    if not inside.any():
        return
    poly_p: list[np.ndarray] = []
    poly_b: list[np.ndarray] = []
    eye = np.eye(3)
    for i in range(3):
        j = (i + 1) % 3
        if inside[i]:
            poly_p.append(cam_pts[i])
            poly_b.append(eye[i])
        if inside[i] != inside[j]:
            u = (NEAR_PLANE - z[i]) / (z[j] - z[i])
            poly_p.append(cam_pts[i] + u * (cam_pts[j] - cam_pts[i]))
            poly_b.append(eye[i] + u * (eye[j] - eye[i]))
    for k in range(1, len(poly_p) - 1):
        yield (np.stack([poly_p[0], poly_p[k], poly_p[k + 1]]),
               np.stack([poly_b[0], poly_b[k], poly_b[k + 1]]))


def rasterize(scene: Scene, rig: cam.CameraRig, t: float,
              pose_override=None, lens_offset=(0.0, 0.0)) -> GBuffer:
    """Rasterize or ray-cast the scene into a G-buffer at time t.

    Pinhole cameras without distortion use perspective-correct triangle
    rasterization; other models cast one ray per pixel against a BVH.
    lens_offset shifts the camera on its lens plane for depth-of-field
    sampling (pinhole path only).
    """
    w, h = rig.resolution
    pos, quat = pose_override if pose_override is not None else rig.pose(t)
    soup = _assemble_soup(scene, t)
    gb = GBuffer(
        rig=rig, t=t, cam_pos=np.asarray(pos, dtype=float), cam_quat=quat,
        depth=np.full((h, w), np.inf),
        world_pos=np.zeros((h, w, 3)),
        normal=np.zeros((h, w, 3)),
        uv=np.zeros((h, w, 2)),
        instance=np.zeros((h, w), dtype=np.uint32),
        semantic=np.zeros((h, w), dtype=np.uint16),
        entity_idx=np.full((h, w), -1, dtype=np.int32),
        tri_idx=np.zeros((h, w), dtype=np.int32),
        bary=np.zeros((h, w, 3)),
        soup=soup,
        bvh=BVH(soup.pts),
    )
    if soup.pts.shape[0] == 0:
        return gb
    raster_path = rig.model == cam.PINHOLE and rig.k1 == 0.0 and rig.k2 == 0.0
    if raster_path:
        _raster_triangles(gb, scene, rig, t, lens_offset)
    else:
        _raycast_pixels(gb, rig, t)
    _finalize_gbuffer(gb)
    return gb


def _raster_triangles(gb: GBuffer, scene, rig, t, lens_offset):
    w, h = rig.resolution
    f = rig.focal(t)
    cx, cy = rig.principal_point
    lx, ly = lens_offset
    if lx != 0.0 or ly != 0.0:
        focus = eval_scalar(rig.focus_distance, t)
        cx += f * lx / focus
        cy += f * ly / focus
    rot = quat_to_matrix(gb.cam_quat)
    origin = gb.cam_pos + rot @ np.array([lx, ly, 0.0])
    soup = gb.soup
    cam_all = (soup.pts.reshape(-1, 3) - origin) @ rot  # world->camera
    cam_all = cam_all.reshape(-1, 3, 3)
    gtri = np.full((h, w), -1, dtype=np.int64)
    zbuf = gb.depth
    bary = gb.bary
    # cull triangles fully outside the viewport early
    zs = cam_all[:, :, 2]
    front = zs.max(axis=1) >= NEAR_PLANE
    for ti in np.nonzero(front)[0]:
        for cam_pts, bmap in _clip_near(cam_all[ti]):
            z = cam_pts[:, 2]
            sx = f * cam_pts[:, 0] / z + cx
            sy = f * cam_pts[:, 1] / z + cy
            area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0])
            if area == 0.0:
                continue
            if area < 0:
                sx = sx[[0, 2, 1]]
                sy = sy[[0, 2, 1]]
                z = z[[0, 2, 1]]
                bmap = bmap[[0, 2, 1]]
                area = -area
            ix0 = max(int(math.floor(sx.min() - 0.5)), 0)
            ix1 = min(int(math.ceil(sx.max() - 0.5)), w - 1)
            iy0 = max(int(math.floor(sy.min() - 0.5)), 0)
            iy1 = min(int(math.ceil(sy.max() - 0.5)), h - 1)
            if ix1 < ix0 or iy1 < iy0:
                continue
            px = np.arange(ix0, ix1 + 1) + 0.5
            py = (np.arange(iy0, iy1 + 1) + 0.5)[:, None]
            w0 = (sx[2] - sx[1]) * (py - sy[1]) - (sy[2] - sy[1]) * (px - sx[1])
            w1 = (sx[0] - sx[2]) * (py - sy[2]) - (sy[0] - sy[2]) * (px - sx[2])
            w2 = (sx[1] - sx[0]) * (py - sy[0]) - (sy[1] - sy[0]) * (px - sx[0])
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
            if not inside.any():
                continue
            ry, rx = np.nonzero(inside)
            b0 = w0[inside] / area
            b1 = w1[inside] / area
            b2 = 1.0 - b0 - b1
            zinv = b0 / z[0] + b1 / z[1] + b2 / z[2]
            depth = 1.0 / zinv
            yy = ry + iy0
            xx = rx + ix0
            closer = depth < zbuf[yy, xx]
            if not closer.any():
                continue
            yy, xx = yy[closer], xx[closer]
            depth = depth[closer]
            pb0 = (b0[closer] / z[0]) * depth
            pb1 = (b1[closer] / z[1]) * depth
            pb2 = (b2[closer] / z[2]) * depth
            zbuf[yy, xx] = depth
            gtri[yy, xx] = ti
            orig = (pb0[:, None] * bmap[0] + pb1[:, None] * bmap[1]
                    + pb2[:, None] * bmap[2])
            bary[yy, xx] = orig
    gb._gtri = gtri


def _raycast_pixels(gb: GBuffer, rig, t):
    w, h = rig.resolution
    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pix = np.column_stack([xs.ravel(), ys.ravel()])
    dirs_cam = cam.unproject_many(rig, pix, t)
    rot = quat_to_matrix(gb.cam_quat)
    dirs = dirs_cam @ rot.T
    origins = np.broadcast_to(gb.cam_pos, dirs.shape).copy()
    t_hit, tri, uvh = gb.bvh.intersect(origins, dirs)
    hit = tri >= 0
    gtri = np.full(h * w, -1, dtype=np.int64)
    gtri[hit] = tri[hit]
    gb._gtri = gtri.reshape(h, w)
    bary = np.zeros((h * w, 3))
    bary[hit, 1] = uvh[hit, 0]
    bary[hit, 2] = uvh[hit, 1]
    bary[hit, 0] = 1.0 - uvh[hit, 0] - uvh[hit, 1]
    gb.bary = bary.reshape(h, w, 3)
    depth = np.full(h * w, np.inf)
    if rig.model == cam.PINHOLE:
        depth[hit] = t_hit[hit] * dirs_cam[hit, 2]
    else:
        depth[hit] = t_hit[hit]  # ray distance for full-sphere models
        gb.depth_is_distance = True
    gb.depth = depth.reshape(h, w)


def _finalize_gbuffer(gb: GBuffer):
    gtri = gb._gtri
    hit = gtri >= 0
    if not hit.any():
        return
    ids = gtri[hit]
    b = gb.bary[hit]  # (n, 3)
    soup = gb.soup
    gb.world_pos[hit] = np.einsum("nk,nkj->nj", b, soup.pts[ids])
    n = np.einsum("nk,nkj->nj", b, soup.nrm[ids])
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    gb.normal[hit] = np.divide(n, ln, out=np.zeros_like(n), where=ln > 0)
    gb.uv[hit] = np.einsum("nk,nkj->nj", b, soup.uv[ids])
    gb.instance[hit] = soup.instance[ids]
    gb.semantic[hit] = soup.semantic[ids]
    gb.entity_idx[hit] = soup.entity_idx[ids]
    gb.tri_idx[hit] = soup.tri_idx[ids]


# ----------------------------------------------------------------------
# shading

def _apply_normal_maps(gb: GBuffer, scene: Scene) -> np.ndarray:
    """Shading normals with tangent-space normal maps applied per entity."""
    normal = gb.normal.copy()
    hit = gb.covered
    for ei, ent in enumerate(scene.entities):
        mat = ent.material
        if mat.normal_map is None or ent.mesh.uvs is None:
            continue
        mask = hit & (gb.entity_idx == ei)
        if not mask.any():
            continue
        ids = gb._gtri[mask]
        soup = gb.soup
        p0 = soup.pts[ids, 0]
        e1 = soup.pts[ids, 1] - p0
        e2 = soup.pts[ids, 2] - p0
        t0 = soup.uv[ids, 0]
        du1 = soup.uv[ids, 1] - t0
        du2 = soup.uv[ids, 2] - t0
        det = du1[:, 0] * du2[:, 1] - du1[:, 1] * du2[:, 0]
        safe = np.where(np.abs(det) < 1e-12, 1.0, det)
        tangent = (e1 * du2[:, 1, None] - e2 * du1[:, 1, None]) / safe[:, None]
        n = normal[mask]
        tangent = tangent - n * np.einsum("ij,ij->i", tangent, n)[:, None]
        tl = np.linalg.norm(tangent, axis=1, keepdims=True)
        tangent = np.divide(tangent, tl, out=np.zeros_like(tangent), where=tl > 1e-12)
        bitangent = np.cross(n, tangent)
        sample = sample_texture_many(mat.normal_map, gb.uv[mask])
        if sample.shape[1] == 1:
            sample = np.repeat(sample, 3, axis=1)
        tn = sample[:, :3] * 2.0 - 1.0
        tn[:, :2] *= mat.normal_strength
        perturbed = (tangent * tn[:, 0, None] + bitangent * tn[:, 1, None]
                     + n * tn[:, 2, None])
        ln = np.linalg.norm(perturbed, axis=1, keepdims=True)
        normal[mask] = np.divide(perturbed, ln, out=n, where=ln > 1e-12)
    return normal


def _albedo(gb: GBuffer, scene: Scene) -> np.ndarray:
    h, w = gb.depth.shape
    albedo = np.zeros((h, w, 3))
    for ei, ent in enumerate(scene.entities):
        mask = gb.covered & (gb.entity_idx == ei)
        if not mask.any():
            continue
        mat = ent.material
        if mat.albedo_texture is not None and ent.mesh.uvs is not None:
            tex = sample_texture_many(mat.albedo_texture, gb.uv[mask])
            if tex.shape[1] == 1:
                tex = np.repeat(tex, 3, axis=1)
            albedo[mask] = tex[:, :3]
        else:
            albedo[mask] = mat.base_color
    return albedo


def _rain_overlay(rgb: np.ndarray, intensity: float, key: int) -> np.ndarray:
    """Seeded screen-space streaks, alpha scaled by intensity."""
    h, w, _ = rgb.shape
    gen = seeding.rng(key, "rain")
    count = int(200 * intensity * (h * w) / (256 * 256)) + 1
    out = rgb.copy()
    for _ in range(count):
        x = gen.random() * w
        y = gen.random() * h
        length = 6.0 + gen.random() * 10.0
        slant = (gen.random() - 0.5) * 0.3
        alpha = (0.15 + 0.2 * gen.random()) * intensity
        steps = int(length)
        ys = (y + np.arange(steps)).astype(int)
        xs = (x + slant * np.arange(steps)).astype(int)
        ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        ys, xs = ys[ok], xs[ok]
        out[ys, xs] = out[ys, xs] * (1 - alpha) + alpha * 0.7
    return out


def shade(gb: GBuffer, scene: Scene, lights: list, weather: WeatherState | None = None,
          rain_key: int = 0) -> np.ndarray:
    """Linear-light RGB for a G-buffer (no tone mapping).

    Per pixel: albedo * [sum over lights of Lambert * irradiance * shadow
    + ambient], then exponential fog toward the fog color and the rain
    streak overlay.  One shadow ray per pixel per sun/point light.
    """
    weather = weather or WeatherState()
    h, w = gb.depth.shape
    hit = gb.covered
    albedo = _albedo(gb, scene)
    normal = _apply_normal_maps(gb, scene)
    rgb = np.zeros((h, w, 3))
    rgb[~hit] = _SKY_COLORS[weather.lighting]

    if hit.any():
        n = normal[hit]
        p = gb.world_pos[hit]
        view = p - gb.cam_pos
        front = np.einsum("ij,ij->i", n, view) < 0
        n = np.where(front[:, None], n, -n)  # two-sided shading
        irradiance = np.zeros((len(p), 3))
        for light in lights:
            if isinstance(light, AmbientLight):
                irradiance += np.asarray(light.radiance)
            elif isinstance(light, SunLight):
                l = -light.direction
                lam = np.maximum(np.einsum("ij,j->i", n, l), 0.0)
                lit = lam > 0
                if lit.any():
                    origins = p[lit] + n[lit] * SHADOW_EPS
                    dirs = np.broadcast_to(l, origins.shape).copy()
                    t_max = np.full(len(origins), np.inf)
                    blocked = gb.bvh.any_hit(origins, dirs, t_max)
                    vis = np.zeros(len(p))
                    vis[np.nonzero(lit)[0][~blocked]] = 1.0
                    tint = blackbody_rgb(light.color_temperature)
                    irradiance += (lam * vis * light.irradiance)[:, None] * tint
            elif isinstance(light, PointLight):
                delta = light.position - p
                r = np.linalg.norm(delta, axis=1)
                r_safe = np.where(r < 1e-9, 1.0, r)
                l = delta / r_safe[:, None]
                lam = np.maximum(np.einsum("ij,ij->i", n, l), 0.0)
                e = light.power / (4.0 * math.pi * r_safe**2)
                lit = (lam > 0) & (e > 1e-6)
                if lit.any():
                    origins = p[lit] + n[lit] * SHADOW_EPS
                    blocked = gb.bvh.any_hit(origins, l[lit],
                                             r[lit] - 10 * SHADOW_EPS)
                    vis = np.zeros(len(p))
                    vis[np.nonzero(lit)[0][~blocked]] = 1.0
                    irradiance += (lam * vis * e)[:, None] * np.asarray(light.color)
        rgb[hit] = albedo[hit] * irradiance

    if weather.fog_density > 0.0:
        fog_color = np.asarray(_FOG_COLORS[weather.lighting])
        blend = 1.0 - np.exp(-weather.fog_density
                             * np.where(np.isfinite(gb.depth), gb.depth, np.inf))
        rgb = rgb * (1.0 - blend[:, :, None]) + fog_color * blend[:, :, None]
    if weather.rain_intensity > 0.0:
        rgb = _rain_overlay(rgb, weather.rain_intensity, rain_key)
    return rgb


def tonemap(linear: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and apply the sRGB-style 1/2.2 gamma."""
    return np.clip(linear, 0.0, 1.0) ** GAMMA


def luma(rgb: np.ndarray) -> np.ndarray:
    return rgb[..., :3] @ np.array([0.2126, 0.7152, 0.0722])


# ----------------------------------------------------------------------
# ground-truth optical flow

def _project_world(rig, t, pos, quat, world_pts):
    rot = quat_to_matrix(quat)
    cam_pts = (world_pts - pos) @ rot
    return cam.project_many(rig, cam_pts, t)


def compute_flow(scene: Scene, rig: cam.CameraRig, t: float, t_next: float,
                 gb: GBuffer) -> np.ndarray:
    """Forward flow in pixels from t to t_next using exact surface points.

    Covered pixels advect the stored barycentric surface point with the
    entity's pose delta and reproject at t_next.  Background pixels get the
    rotation-only flow of the camera on the sphere at infinity (zero for a
    static camera); unprojectable targets get zero flow.
    """
    h, w = gb.depth.shape
    flow = np.zeros((h, w, 2), dtype=np.float64)
    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pos_next, quat_next = rig.pose(t_next)
    hit = gb.covered
    if hit.any():
        ids = gb._gtri[hit]
        b = gb.bary[hit]
        local = np.einsum("nk,nkj->nj", b, gb.soup.lpts[ids])
        ent_of_pix = gb.entity_idx[hit]
        world_next = np.zeros_like(local)
        for ei in np.unique(ent_of_pix):
            ent = scene.entities[ei]
            epos, equat = ent.pose.at(t_next)
            sel = ent_of_pix == ei
            world_next[sel] = local[sel] @ quat_to_matrix(equat).T + epos
        uv_next, valid = _project_world(rig, t_next, pos_next, quat_next, world_next)
        fx = np.zeros(len(uv_next))
        fy = np.zeros(len(uv_next))
        fx[valid] = uv_next[valid, 0] - xs[hit][valid]
        fy[valid] = uv_next[valid, 1] - ys[hit][valid]
        flow[hit] = np.column_stack([fx, fy])
    bg = ~hit
    if bg.any():
        pos_t, quat_t = gb.cam_pos, gb.cam_quat
        same_rot = np.allclose(quat_t, quat_next, atol=1e-15) \
            or np.allclose(quat_t, -quat_next, atol=1e-15)
        if not same_rot:
            pix = np.column_stack([xs[bg], ys[bg]])
            d_cam = cam.unproject_many(rig, pix, t)
            d_world = d_cam @ quat_to_matrix(quat_t).T
            d_cam_next = d_world @ quat_to_matrix(quat_next)
            uv_next, valid = cam.project_many(rig, d_cam_next, t_next)
            fx = np.zeros(len(uv_next))
            fy = np.zeros(len(uv_next))
            fx[valid] = uv_next[valid, 0] - xs[bg][valid]
            fy[valid] = uv_next[valid, 1] - ys[bg][valid]
            flow[bg] = np.column_stack([fx, fy])
    return flow


# ----------------------------------------------------------------------
# frame assembly

@dataclass
class AnnotationFrame:
    rgb: np.ndarray                      # (h, w, 3) float32 sRGB in [0, 1]
    depth: np.ndarray                    # (h, w) float32, inf background
    flow: np.ndarray                     # (h, w, 2) float32 px
    normals: np.ndarray                  # (h, w, 3) float32, camera frame
    instance_seg: np.ndarray             # (h, w) uint32
    semantic_seg: np.ndarray             # (h, w) uint16
    event_frame: ev.EventFrame | None
    stereo_right_rgb: np.ndarray | None  # (h, w, 3) float32
    meta: FrameMeta


def _lens_samples(count: int, key: int):
    """Stratified unit-disk samples (concentric map); count=1 is the center."""
    if count <= 1:
        return [(0.0, 0.0)]
    gen = seeding.rng(key, "lens")
    side = max(int(math.ceil(math.sqrt(count))), 1)
    pts = []
    for i in range(count):
        gx = (i % side + gen.random()) / side
        gy = (i // side % side + gen.random()) / side
        a, b = 2.0 * gx - 1.0, 2.0 * gy - 1.0
        if a == 0.0 and b == 0.0:
            pts.append((0.0, 0.0))
            continue
        if abs(a) > abs(b):
            r, phi = a, (math.pi / 4.0) * (b / a)
        else:
            r, phi = b, (math.pi / 2.0) - (math.pi / 4.0) * (a / b)
        pts.append((r * math.cos(phi), r * math.sin(phi)))
    return pts


def _time_samples(t: float, shutter: float, count: int, key: int):
    if shutter <= 0.0 or count <= 1:
        return [t]
    gen = seeding.rng(key, "shutter")
    return [t + shutter * ((i + gen.random()) / count - 0.5) for i in range(count)]


def _shaded_rgb(scene, rig, t, lights, weather, pose, lens, rain_key):
    gb = rasterize(scene, rig, t, pose_override=pose, lens_offset=lens)
    return shade(gb, scene, lights, weather, rain_key=rain_key)


def render_frame(scene: Scene, rig: cam.CameraRig, frame_index: int,
                 lights: list | None = None, seed: int = 0,
                 samples_lens: int = 1, samples_time: int = 1) -> AnnotationFrame:
    """Render one output frame with every annotation pass.

    RGB accumulates stratified thin-lens and shutter-window samples; all
    ground-truth passes come from the central-time, zero-aperture G-buffer
    so labels stay crisp under blur.  Event frames integrate the timeline's
    supersampled luma sequence when scene.timeline.events is set.
    """
    tl = scene.timeline
    t = tl.frame_time(frame_index)
    weather = scene.weather or WeatherState()
    if lights is None:
        lights = preset_lights(weather)
    frame_key = seeding.mix64(seed, "frame", frame_index)

    gb = rasterize(scene, rig, t)
    rgb_passes = {}
    for eye, pose in _stereo_poses(rig, t):
        aperture = eval_scalar(rig.aperture_radius, t)
        lens_pts = _lens_samples(samples_lens if aperture > 0 else 1,
                                 seeding.mix64(frame_key, eye, "l"))
        times = _time_samples(t, rig.shutter_time, samples_time,
                              seeding.mix64(frame_key, eye, "t"))
        acc = None
        count = 0
        for tj in times:
            for (la, lb) in lens_pts:
                lens = (la * aperture, lb * aperture)
                if eye == "left" and tj == t and lens == (0.0, 0.0):
                    img = shade(gb, scene, lights, weather, rain_key=frame_key)
                else:
                    img = _shaded_rgb(scene, rig, tj, lights, weather, pose,
                                      lens, frame_key)
                acc = img if acc is None else acc + img
                count += 1
        rgb_passes[eye] = tonemap(acc / count)

    t_next = tl.frame_time(frame_index + 1)
    flow = compute_flow(scene, rig, t, t_next, gb)

    rot = quat_to_matrix(gb.cam_quat)
    normals_cam = gb.normal @ rot  # world -> camera frame
    normals_cam[~gb.covered] = 0.0

    event_frame = None
    if tl.events:
        n_sub = tl.supersample
        lumas = []
        for k in range(n_sub + 1):
            tk = t + (t_next - t) * k / n_sub
            if tk == t:
                sub = shade(gb, scene, lights, weather, rain_key=frame_key)
            else:
                sub = _shaded_rgb(scene, rig, tk, lights, weather,
                                  rig.pose(tk), (0.0, 0.0), frame_key)
            lumas.append(luma(sub))
        pieces = [ev.events_from_pair(
            lumas[k], lumas[k + 1], scene.event_threshold,
            scene.event_noise_sigma,
            seed=seeding.mix64(frame_key, "ev", k),
            t_start=t + (t_next - t) * k / n_sub,
            t_end=t + (t_next - t) * (k + 1) / n_sub)
            for k in range(n_sub)]
        event_frame = ev.accumulate_events(pieces)

    baseline = eval_scalar(rig.stereo_baseline, t)
    meta = FrameMeta(
        frame_number=frame_index,
        time=t,
        camera_id=rig.camera_id,
        intrinsics=rig.intrinsic_matrix(t),
        distortion=(rig.k1, rig.k2, rig.chromatic_alpha),
        world_from_camera=rig.world_from_camera(t),
        projection_model=rig.model,
        stereo_baseline=baseline,
        lighting=weather.lighting,
        weather=weather.weather,
        seed=seed,
        depth_convention="distance" if gb.depth_is_distance else "z",
    )
    return AnnotationFrame(
        rgb=rgb_passes["left"].astype(np.float32),
        depth=gb.depth.astype(np.float32),
        flow=flow.astype(np.float32),
        normals=normals_cam.astype(np.float32),
        instance_seg=gb.instance.copy(),
        semantic_seg=gb.semantic.copy(),
        event_frame=event_frame,
        stereo_right_rgb=(rgb_passes["right"].astype(np.float32)
                          if "right" in rgb_passes else None),
        meta=meta,
    )


def _stereo_poses(rig: cam.CameraRig, t: float):
    left, right = cam.stereo_pair(rig, t)
    baseline = eval_scalar(rig.stereo_baseline, t)
    out = [("left", left)]
    if baseline > 0.0:
        out.append(("right", right))
    return out


def anaglyph(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Red/cyan anaglyph: R = luma(left), G = B = luma(right)."""
    if left.shape[:2] != right.shape[:2]:
        raise ResolutionMismatch(f"{left.shape} vs {right.shape}")
    ll = luma(left)
    lr = luma(right)
    return np.stack([ll, lr, lr], axis=-1)
