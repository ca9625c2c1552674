"""Scene graph and keyframe animation.

Tracks interpolate scalars, 3-vectors and quaternions with linear or cubic
Bezier segments; Bezier handles are relative to their key in (time, value)
space and the time -> curve-parameter inversion is done by bisection.
Physics trajectories bake into per-frame linear tracks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assets import Material
from .geom import quat_nlerp, quat_normalize, quat_slerp
from .mesh import TriMesh

BISECTION_TOL = 1e-9
_NLERP_MIN_DOT = math.cos(math.pi / 4.0)  # keys within 90 degrees of rotation


class UnknownEntity(KeyError):
    pass


class MixedControl(ValueError):
    pass


class SceneValidationError(ValueError):
    pass


@dataclass
class Key:
    time: float
    value: np.ndarray
    interp: str = "linear"  # "linear" | "bezier"
    handle_out: np.ndarray | None = None  # relative (dt, dvalue...) leaving this key
    handle_in: np.ndarray | None = None   # relative (dt, dvalue...) arriving here

    def __post_init__(self):
        self.value = np.atleast_1d(np.asarray(self.value, dtype=float))
        if self.interp not in ("linear", "bezier"):
            raise SceneValidationError(f"unknown interpolation '{self.interp}'")
        if self.handle_out is not None:
            self.handle_out = np.asarray(self.handle_out, dtype=float)
        if self.handle_in is not None:
            self.handle_in = np.asarray(self.handle_in, dtype=float)


@dataclass
class Track:
    keys: list[Key]
    is_quaternion: bool = False

    def __post_init__(self):
        if not self.keys:
            raise SceneValidationError("track needs at least one key")
        times = [k.time for k in self.keys]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise SceneValidationError("key times must be strictly increasing")

    @property
    def dim(self) -> int:
        return len(self.keys[0].value)


def constant(value, is_quaternion: bool = False) -> Track:
    return Track([Key(0.0, value)], is_quaternion=is_quaternion)


def _bezier_component(p0t, p0v, out_h, in_h, p1t, p1v, t: float) -> float:
    """De Casteljau on the 2D (time, value) cubic, solving time by bisection."""
    c0 = np.array([p0t, p0v])
    c1 = c0 + out_h
    c2 = np.array([p1t, p1v]) + in_h
    c3 = np.array([p1t, p1v])

    def curve(u: float) -> np.ndarray:
        a0 = c0 + (c1 - c0) * u
        a1 = c1 + (c2 - c1) * u
        a2 = c2 + (c3 - c2) * u
        b0 = a0 + (a1 - a0) * u
        b1 = a1 + (a2 - a1) * u
        return b0 + (b1 - b0) * u

    lo, hi = 0.0, 1.0
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if curve(mid)[0] < t:
            lo = mid
        else:
            hi = mid
    return float(curve(0.5 * (lo + hi))[1])


def _segment_value(a: Key, b: Key, t: float, is_quat: bool) -> np.ndarray:
    dt = b.time - a.time
    u = (t - a.time) / dt
    if a.interp == "linear":
        if is_quat:
            qa = quat_normalize(a.value)
            qb = quat_normalize(b.value)
            d = abs(float(np.dot(qa, qb)))
            if d >= _NLERP_MIN_DOT:
                return quat_nlerp(qa, qb, u)
            return quat_slerp(qa, qb, u)
        return a.value + (b.value - a.value) * u
    dim = len(a.value)
    out = np.empty(dim)
    for k in range(dim):
        oh = a.handle_out[[0, k + 1]] if a.handle_out is not None \
            else np.array([dt / 3.0, (b.value[k] - a.value[k]) / 3.0])
        ih = b.handle_in[[0, k + 1]] if b.handle_in is not None \
            else np.array([-dt / 3.0, -(b.value[k] - a.value[k]) / 3.0])
        out[k] = _bezier_component(a.time, a.value[k], oh, ih, b.time, b.value[k], t)
    if is_quat:
        return quat_normalize(out)
    return out


def eval_track(track: Track, t: float) -> np.ndarray:
    """Evaluate at time t; clamps to the first/last key outside the range."""
    keys = track.keys
    if t <= keys[0].time:
        v = keys[0].value
        return quat_normalize(v) if track.is_quaternion else v.copy()
    if t >= keys[-1].time:
        v = keys[-1].value
        return quat_normalize(v) if track.is_quaternion else v.copy()
    # binary search for the segment
    lo, hi = 0, len(keys) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if keys[mid].time <= t:
            lo = mid
        else:
            hi = mid
    return _segment_value(keys[lo], keys[hi], t, track.is_quaternion)


def eval_scalar(track: Track, t: float) -> float:
    return float(eval_track(track, t)[0])


@dataclass
class PoseTrack:
    position: Track
    rotation: Track

    def __post_init__(self):
        self.rotation.is_quaternion = True

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return eval_track(self.position, t), eval_track(self.rotation, t)


def static_pose(position=(0.0, 0.0, 0.0), rotation=(1.0, 0.0, 0.0, 0.0)) -> PoseTrack:
    return PoseTrack(constant(np.asarray(position, dtype=float)),
                     constant(np.asarray(rotation, dtype=float), is_quaternion=True))


# ----------------------------------------------------------------------
# lights

@dataclass
class SunLight:
    direction: np.ndarray  # unit, light travel direction (from sun into scene)
    irradiance: float = 1.0
    color_temperature: float = 5800.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0 or self.irradiance < 0 or self.color_temperature <= 0:
            raise SceneValidationError("bad sun light parameters")
        self.direction = d / n


@dataclass
class PointLight:
    position: np.ndarray
    power: float  # W
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.power < 0:
            raise SceneValidationError("point light power must be >= 0")


@dataclass
class AmbientLight:
    radiance: tuple[float, float, float]


Light = SunLight | PointLight | AmbientLight


# ----------------------------------------------------------------------
# scene

SEMANTIC_IDS: dict[str, int] = {
    "background": 0, "ground": 1, "building": 2, "road": 3, "highway": 4,
    "pedestrian_path": 5, "railway": 6, "water": 7, "forest": 8,
    "vegetation": 9, "unknown": 10, "object": 11, "fragment": 12,
    "projectile": 13, "traffic_light": 14, "stop_sign": 15, "tree": 16,
    "bench": 17, "street_light": 18, "antenna": 19, "vent": 20, "chimney": 21,
}


def semantic_id(label: str) -> int:
    return SEMANTIC_IDS.get(label, SEMANTIC_IDS["unknown"])


@dataclass
class Entity:
    entity_id: int
    mesh: TriMesh
    material: Material
    label: str
    pose: PoseTrack
    visible_from: float = -math.inf
    visible_until: float = math.inf

    def visible_at(self, t: float) -> bool:
        return self.visible_from <= t < self.visible_until


@dataclass
class Timeline:
    frame_rate: float
    frame_count: int
    supersample: int = 1
    events: bool = False

    def __post_init__(self):
        if self.frame_rate <= 0 or self.frame_count < 1 or self.supersample < 1:
            raise SceneValidationError("bad timeline parameters")

    def frame_time(self, index: int) -> float:
        return index / self.frame_rate

    @property
    def duration(self) -> float:
        return self.frame_count / self.frame_rate


@dataclass
class Scene:
    entities: list[Entity] = field(default_factory=list)
    lights: list[Light] = field(default_factory=list)
    cameras: list = field(default_factory=list)  # CameraRig
    timeline: Timeline = field(default_factory=lambda: Timeline(24.0, 24))
    weather: object = None  # render.WeatherState; None means clear midday
    event_threshold: float = 0.2
    event_noise_sigma: float = 0.0

    def validate(self) -> None:
        ids = [e.entity_id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise SceneValidationError("entity ids must be unique")
        if any(i <= 0 for i in ids):
            raise SceneValidationError("entity ids must be >= 1 (0 is background)")
        if max(ids, default=0) > 65535:
            raise SceneValidationError("instance ids exceed 16-bit range")

    def entity_map(self) -> dict[int, Entity]:
        return {e.entity_id: e for e in self.entities}


def bake_trajectory(scene: Scene, trajectory) -> Scene:
    """Convert per-frame physics poses into linear pose tracks.

    Entities not present in the trajectory keep their authored tracks;
    physics-driven entities must not also carry hand animation.
    """
    by_id = scene.entity_map()
    samples: dict[int, list[tuple[float, np.ndarray, np.ndarray]]] = {}
    for fr in trajectory.frames:
        for body_id, (pos, quat) in fr.poses.items():
            samples.setdefault(body_id, []).append((fr.time, pos, quat))
    frame_dt = 1.0 / trajectory.frame_rate
    for body_id, rows in samples.items():
        if body_id not in by_id:
            raise UnknownEntity(f"trajectory body {body_id} has no scene entity")
        ent = by_id[body_id]
        if len(ent.pose.position.keys) > 1 or len(ent.pose.rotation.keys) > 1:
            raise MixedControl(f"entity {body_id} is both hand-animated and simulated")
        rows.sort(key=lambda r: r[0])
        pos_keys = [Key(t, p) for t, p, _ in rows]
        rot_keys = [Key(t, q) for t, _, q in rows]
        ent.pose = PoseTrack(Track(pos_keys), Track(rot_keys, is_quaternion=True))
        ent.visible_from = rows[0][0]
        ent.visible_until = rows[-1][0] + frame_dt
    return scene


def supersample_timeline(scene: Scene, n: int) -> Scene:
    """Remap the timeline to n-times more frames over the same world time.

    All animated tracks are re-keyed at the finer frame grid; evaluating at
    any original frame time is unchanged.
    """
    if n < 1:
        raise ValueError("supersample factor must be >= 1")
    if n == 1:
        return scene
    tl = scene.timeline
    new_tl = replace(tl, frame_rate=tl.frame_rate * n, frame_count=tl.frame_count * n)
    entities = []
    for ent in scene.entities:
        if len(ent.pose.position.keys) == 1 and len(ent.pose.rotation.keys) == 1:
            entities.append(ent)
            continue
        times = [new_tl.frame_time(i) for i in range(new_tl.frame_count + 1)]
        pos_keys = [Key(t, eval_track(ent.pose.position, t)) for t in times]
        rot_keys = [Key(t, eval_track(ent.pose.rotation, t)) for t in times]
        entities.append(replace(
            ent, pose=PoseTrack(Track(pos_keys), Track(rot_keys, is_quaternion=True))))
    return replace(scene, entities=entities, timeline=new_tl)


# ----------------------------------------------------------------------
# JSON scene description

def track_from_config(cfg, dim: int, is_quaternion: bool = False) -> Track:
    """Build a track from a constant value or {'keys': [...]} mapping."""
    if isinstance(cfg, (int, float)):
        if dim != 1:
            raise SceneValidationError(f"scalar given where {dim}-vector expected")
        return Track([Key(0.0, [float(cfg)])], is_quaternion=is_quaternion)
    if isinstance(cfg, (list, tuple)):
        arr = np.asarray(cfg, dtype=float)
        if arr.shape != (dim,):
            raise SceneValidationError(f"expected {dim} components, got {arr.shape}")
        return Track([Key(0.0, arr)], is_quaternion=is_quaternion)
    if isinstance(cfg, dict) and "keys" in cfg:
        keys = []
        for k in cfg["keys"]:
            keys.append(Key(float(k["t"]), np.atleast_1d(np.asarray(k["value"], dtype=float)),
                            k.get("interp", "linear"),
                            k.get("handle_out"), k.get("handle_in")))
        for k in keys:
            if len(k.value) != dim:
                raise SceneValidationError(f"key value must have {dim} components")
        return Track(keys, is_quaternion=is_quaternion)
    raise SceneValidationError(f"cannot parse track config: {cfg!r}")


def pose_from_config(cfg: dict | None) -> PoseTrack:
    cfg = cfg or {}
    pos = track_from_config(cfg.get("position", [0.0, 0.0, 0.0]), 3)
    rot = track_from_config(cfg.get("rotation", [1.0, 0.0, 0.0, 0.0]), 4,
                            is_quaternion=True)
    return PoseTrack(pos, rot)


def light_from_config(cfg: dict) -> Light:
    kind = cfg.get("type")
    if kind == "sun":
        return SunLight(cfg["direction"], float(cfg.get("irradiance", 1.0)),
                        float(cfg.get("color_temperature", 5800.0)))
    if kind == "point":
        return PointLight(cfg["position"], float(cfg["power"]),
                          tuple(cfg.get("color", (1.0, 1.0, 1.0))))
    if kind == "ambient":
        return AmbientLight(tuple(cfg["radiance"]))
    raise SceneValidationError(f"unknown light type {kind!r}")
