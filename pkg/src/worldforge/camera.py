"""Camera models: pinhole, equidistant fisheye, equirectangular.

Convention: camera frame has +z forward, +x right, +y down; pixel (0, 0)
is the top-left corner and pixel centers sit at half-integer coordinates.
Radial distortion follows the two-term Brown-Conrady polynomial; the
inverse is solved with damped Newton iterations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import quat_rotate, quat_to_matrix
from .scene_anim import PoseTrack, Track, constant, eval_scalar, static_pose

PINHOLE = "pinhole"
FISHEYE = "fisheye_equidistant"
EQUIRECTANGULAR = "equirectangular"
_MODELS = (PINHOLE, FISHEYE, EQUIRECTANGULAR)


class NewtonDiverged(RuntimeError):
    pass


@dataclass
class CameraRig:
    model: str = PINHOLE
    resolution: tuple[int, int] = (256, 256)  # (W, H)
    focal_length: Track = field(default_factory=lambda: constant(100.0))  # px
    principal_point: tuple[float, float] | None = None  # defaults to center
    k1: float = 0.0
    k2: float = 0.0
    chromatic_alpha: float = 0.0
    aperture_radius: Track = field(default_factory=lambda: constant(0.0))  # m
    focus_distance: Track = field(default_factory=lambda: constant(2.0))   # m
    extrinsics: PoseTrack = field(default_factory=static_pose)
    stereo_baseline: Track = field(default_factory=lambda: constant(0.0))  # m
    shutter_time: float = 0.0  # s
    camera_id: str = "cam0"

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ValueError(f"unknown camera model {self.model!r}")
        w, h = self.resolution
        if w < 1 or h < 1:
            raise ValueError("resolution must be >= 1x1")
        if self.principal_point is None:
            self.principal_point = (w / 2.0, h / 2.0)

    def focal(self, t: float) -> float:
        f = eval_scalar(self.focal_length, t)
        if f <= 0:
            raise ValueError("focal length must stay positive")
        return f

    def intrinsic_matrix(self, t: float) -> np.ndarray:
        f = self.focal(t)
        cx, cy = self.principal_point
        return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    def pose(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(position, orientation quaternion) of world-from-camera at t."""
        return self.extrinsics.at(t)

    def world_from_camera(self, t: float) -> np.ndarray:
        pos, quat = self.pose(t)
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(quat)
        m[:3, 3] = pos
        return m


# ----------------------------------------------------------------------
# projection (vectorized; scalar wrappers at the end)

def project_many(rig: CameraRig, points: np.ndarray, t: float = 0.0):
    """Project (n, 3) camera-frame points.

    Returns (pixels (n, 2), valid (n,) bool).  Pinhole marks points with
    z <= 0 invalid; fisheye/equirectangular only reject the origin.
    Pinhole radial distortion is applied when k1/k2 are nonzero.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    f = rig.focal(t)
    cx, cy = rig.principal_point
    w, h = rig.resolution
    uv = np.zeros((len(p), 2))
    if rig.model == PINHOLE:
        z = p[:, 2]
        valid = z > 1e-12
        zs = np.where(valid, z, 1.0)
        xn = p[:, 0] / zs
        yn = p[:, 1] / zs
        if rig.k1 != 0.0 or rig.k2 != 0.0:
            xn, yn = distort_many(rig, xn, yn)
        uv[:, 0] = f * xn + cx
        uv[:, 1] = f * yn + cy
        return uv, valid
    norms = np.linalg.norm(p, axis=1)
    valid = norms > 1e-12
    if rig.model == FISHEYE:
        rho = np.hypot(p[:, 0], p[:, 1])
        theta = np.arctan2(rho, p[:, 2])
        r = f * theta
        safe = np.where(rho > 1e-15, rho, 1.0)
        uv[:, 0] = cx + r * np.where(rho > 1e-15, p[:, 0] / safe, 0.0)
        uv[:, 1] = cy + r * np.where(rho > 1e-15, p[:, 1] / safe, 0.0)
        return uv, valid
    # equirectangular: azimuth from +z toward +x, polar angle from +y axis
    ns = np.where(valid, norms, 1.0)
    uv[:, 0] = w * (np.arctan2(p[:, 0], p[:, 2]) + math.pi) / (2.0 * math.pi)
    uv[:, 1] = h * np.arccos(np.clip(p[:, 1] / ns, -1.0, 1.0)) / math.pi
    return uv, valid


def unproject_many(rig: CameraRig, pixels: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Unit ray directions (camera frame) through the given pixel coords."""
    uv = np.asarray(pixels, dtype=float).reshape(-1, 2)
    f = rig.focal(t)
    cx, cy = rig.principal_point
    w, h = rig.resolution
    if rig.model == PINHOLE:
        xn = (uv[:, 0] - cx) / f
        yn = (uv[:, 1] - cy) / f
        if rig.k1 != 0.0 or rig.k2 != 0.0:
            xn, yn = undistort_many(rig, xn, yn)
        d = np.column_stack([xn, yn, np.ones(len(uv))])
        return d / np.linalg.norm(d, axis=1, keepdims=True)
    if rig.model == FISHEYE:
        dx = uv[:, 0] - cx
        dy = uv[:, 1] - cy
        r = np.hypot(dx, dy)
        theta = r / f
        safe = np.where(r > 1e-15, r, 1.0)
        s = np.sin(theta)
        d = np.column_stack([
            np.where(r > 1e-15, s * dx / safe, 0.0),
            np.where(r > 1e-15, s * dy / safe, 0.0),
            np.cos(theta),
        ])
        return d
    lam = uv[:, 0] / w * 2.0 * math.pi - math.pi
    psi = uv[:, 1] / h * math.pi
    sp = np.sin(psi)
    return np.column_stack([sp * np.sin(lam), np.cos(psi), sp * np.cos(lam)])


def distort_many(rig: CameraRig, xn: np.ndarray, yn: np.ndarray):
    """Brown-Conrady radial polynomial on normalized pinhole coordinates."""
    r2 = xn * xn + yn * yn
    s = 1.0 + rig.k1 * r2 + rig.k2 * r2 * r2
    return xn * s, yn * s


def undistort_many(rig: CameraRig, xd: np.ndarray, yd: np.ndarray,
                   max_iter: int = 20, tol: float = 1e-10):
    """Invert the radial polynomial by damped Newton on the radius."""
    rd = np.hypot(xd, yd)
    ru = rd.copy()
    for _ in range(max_iter):
        r2 = ru * ru
        s = 1.0 + rig.k1 * r2 + rig.k2 * r2 * r2
        fval = ru * s - rd
        dfd = 1.0 + 3.0 * rig.k1 * r2 + 5.0 * rig.k2 * r2 * r2
        step = fval / np.where(np.abs(dfd) < 1e-12, 1e-12, dfd)
        # damping keeps the iterate from overshooting to negative radii
        ru = np.maximum(ru - np.clip(step, -0.5 * (np.abs(ru) + 1.0),
                                     0.5 * (np.abs(ru) + 1.0)), 0.0)
    r2 = ru * ru
    s = 1.0 + rig.k1 * r2 + rig.k2 * r2 * r2
    if np.any(np.abs(ru * s - rd) > 1e-6 * np.maximum(rd, 1.0)):
        raise NewtonDiverged(
            "radial undistortion failed; validated range is |k1|<=0.5, |k2|<=0.2")
    scale = np.where(rd > 1e-15, ru / np.where(rd > 1e-15, rd, 1.0), 1.0)
    return xd * scale, yd * scale


def chromatic_offset(rig: CameraRig, normalized_pixel, channel: str):
    """Per-channel radial scale: R x(1+a), G x1, B x(1-a)."""
    scale = {"R": 1.0 + rig.chromatic_alpha, "G": 1.0,
             "B": 1.0 - rig.chromatic_alpha}[channel]
    p = np.asarray(normalized_pixel, dtype=float)
    return p * scale


def project(rig: CameraRig, point_cam, t: float = 0.0):
    """Single-point projection; returns (u, v) or None."""
    uv, valid = project_many(rig, np.asarray(point_cam, dtype=float)[None, :], t)
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def unproject(rig: CameraRig, pixel, t: float = 0.0) -> np.ndarray:
    return unproject_many(rig, np.asarray(pixel, dtype=float)[None, :], t)[0]


def distort(rig: CameraRig, normalized_pixel):
    p = np.asarray(normalized_pixel, dtype=float)
    x, y = distort_many(rig, p[0:1], p[1:2])
    return float(x[0]), float(y[0])


def undistort(rig: CameraRig, normalized_pixel):
    p = np.asarray(normalized_pixel, dtype=float)
    x, y = undistort_many(rig, p[0:1], p[1:2])
    return float(x[0]), float(y[0])


def thin_lens_ray(rig: CameraRig, pixel, lens_sample=(0.0, 0.0), t: float = 0.0):
    """Camera-frame ray (origin, direction) for a thin-lens pinhole camera.

    lens_sample is a point on the unit disk; aperture 0 reduces exactly to
    the pinhole ray through the pixel.
    """
    d = unproject(rig, pixel, t)
    aperture = eval_scalar(rig.aperture_radius, t)
    if aperture == 0.0:
        return np.zeros(3), d
    focus = eval_scalar(rig.focus_distance, t)
    if focus <= 0:
        raise ValueError("focus distance must be positive")
    # pinhole ray hits the focus plane z = focus at this point
    target = d * (focus / d[2])
    origin = np.array([lens_sample[0] * aperture, lens_sample[1] * aperture, 0.0])
    direction = target - origin
    return origin, direction / np.linalg.norm(direction)


def stereo_pair(rig: CameraRig, t: float):
    """World poses (left, right); right is offset along camera +x by the baseline."""
    pos, quat = rig.pose(t)
    baseline = eval_scalar(rig.stereo_baseline, t)
    right_pos = pos + quat_rotate(quat, np.array([baseline, 0.0, 0.0]))
    return (pos, quat), (right_pos, quat.copy())


def look_at_quat(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Orientation with +z toward target, +x right, +y down (z-up world)."""
    from .geom import quat_from_matrix, unit
    z = unit(np.asarray(target, dtype=float) - np.asarray(position, dtype=float))
    upv = np.asarray(up, dtype=float)
    x = np.cross(z, upv)
    if np.linalg.norm(x) < 1e-9:  # looking straight up/down: pick world +x
        x = np.array([1.0, 0.0, 0.0])
    x = unit(x)
    y = np.cross(z, x)
    return quat_from_matrix(np.column_stack([x, y, z]))


def _pose_with_lookat(cfg: dict) -> PoseTrack:
    from .scene_anim import Key, Track, pose_from_config, track_from_config
    if "look_at" not in cfg:
        return pose_from_config(cfg)
    pos_track = track_from_config(cfg.get("position", [0.0, 0.0, 0.0]), 3)
    target = np.asarray(cfg["look_at"], dtype=float)
    keys = [Key(k.time, look_at_quat(k.value, target)) for k in pos_track.keys]
    return PoseTrack(pos_track, Track(keys, is_quaternion=True))


def rig_from_config(cfg: dict) -> CameraRig:
    """Build a rig from a config mapping (see README for the schema)."""
    from .scene_anim import pose_from_config, track_from_config
    model = cfg.get("model", PINHOLE)
    res = tuple(cfg.get("resolution", (256, 256)))
    rig = CameraRig(
        model=model,
        resolution=(int(res[0]), int(res[1])),
        focal_length=track_from_config(cfg.get("focal_length", 100.0), 1),
        principal_point=tuple(cfg["principal_point"]) if "principal_point" in cfg else None,
        k1=float(cfg.get("k1", 0.0)),
        k2=float(cfg.get("k2", 0.0)),
        chromatic_alpha=float(cfg.get("chromatic_alpha", 0.0)),
        aperture_radius=track_from_config(cfg.get("aperture_radius", 0.0), 1),
        focus_distance=track_from_config(cfg.get("focus_distance", 2.0), 1),
        extrinsics=_pose_with_lookat(cfg.get("pose") or {}),
        stereo_baseline=track_from_config(cfg.get("stereo_baseline", 0.0), 1),
        shutter_time=float(cfg.get("shutter_time", 0.0)),
        camera_id=str(cfg.get("camera_id", "cam0")),
    )
    return rig
