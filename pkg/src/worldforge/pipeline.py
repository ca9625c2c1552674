"""Config-driven batch generation: city, pile and fracture recipes.

A job config (YAML or JSON) fully determines every output byte.  Scenes
derive independent seeds from (seed, scene index), fail in isolation, and
can be resumed; the manifest records the resolved config and per-scene
status.
"""
from __future__ import annotations

import hashlib
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import assets as ast
from . import citygen
from . import dynamics as dyn
from . import fracture as frac
from . import osm_ingest as osm
from . import render
from . import seeding
from .camera import rig_from_config
from .collision import Box, ConvexHullShape, Sphere
from .dataset_io import epe, read_flo, write_frame_bundle
from .geom import quat_normalize
from .mesh import TriMesh, centroid as mesh_centroid, make_box, make_icosahedron, \
    make_uv_sphere
from .props import build_prop_library
from .scene_anim import Entity, Scene, Timeline, bake_trajectory, static_pose

MANIFEST_SCHEMA = "worldforge-manifest/1"
RECIPES = ("city", "pile", "fracture")


class ConfigError(ValueError):
    pass


class MissingPair(FileNotFoundError):
    pass


# ----------------------------------------------------------------------
# configuration

@dataclass
class JobConfig:
    raw: dict
    recipe: str
    seed: int
    scene_count: int
    output_root: Path
    cameras: list[dict]
    timeline: dict
    weather: dict
    render_opts: dict
    physics: dict
    event: dict
    texture_noise_sigma: float
    recipe_block: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "JobConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        recipe_cfg = raw.get("recipe")
        if not isinstance(recipe_cfg, dict) or "kind" not in recipe_cfg:
            raise ConfigError("config needs recipe.kind (city | pile | fracture)")
        kind = recipe_cfg["kind"]
        if kind not in RECIPES:
            raise ConfigError(f"unknown recipe kind {kind!r}")
        block = recipe_cfg.get(kind)
        if not isinstance(block, dict):
            raise ConfigError(f"config needs a recipe.{kind} block")
        scene_count = int(raw.get("scene_count", 1))
        if scene_count < 1:
            raise ConfigError("scene_count must be >= 1")
        if "output_root" not in raw:
            raise ConfigError("config needs output_root")
        timeline = dict(raw.get("timeline", {}))
        timeline.setdefault("fps", 24)
        timeline.setdefault("frames", 24)
        timeline.setdefault("event_supersample", 0)
        if timeline["fps"] <= 0 or timeline["frames"] < 1 \
                or timeline["event_supersample"] < 0:
            raise ConfigError("bad timeline block")
        if raw.get("cameras"):
            cameras = raw["cameras"]
        elif "camera" in raw:
            cameras = [raw["camera"]]
        else:
            cameras = [{}]
        cfg = cls(
            raw=raw,
            recipe=kind,
            seed=int(raw.get("seed", 0)),
            scene_count=scene_count,
            output_root=Path(raw["output_root"]),
            cameras=list(cameras),
            timeline=timeline,
            weather=dict(raw.get("weather", {})),
            render_opts=dict(raw.get("render", {})),
            physics=dict(raw.get("physics", {})),
            event=dict(raw.get("event", {})),
            texture_noise_sigma=float(raw.get("texture_noise_sigma", 0.0)),
            recipe_block=block,
        )
        cfg._validate_recipe()
        for cam_cfg in cfg.cameras:
            rig_from_config(cam_cfg)  # raises on bad camera blocks
        render.WeatherState(**cfg.weather)  # validates lighting/weather names
        return cfg

    def _validate_recipe(self):
        b = self.recipe_block
        if self.recipe == "city":
            path = b.get("osm_path")
            if not path or not Path(path).exists():
                raise ConfigError(f"city recipe: osm_path missing or not found: {path}")
        elif self.recipe == "pile":
            path = b.get("asset_list")
            if not path or not Path(path).exists():
                raise ConfigError(f"pile recipe: asset_list missing or not found: {path}")
            if int(b.get("body_count", 0)) < 1:
                raise ConfigError("pile recipe: body_count must be >= 1")
        else:
            target = b.get("target")
            if isinstance(target, str):
                if not Path(target).exists():
                    raise ConfigError(f"fracture recipe: target not found: {target}")
            elif not isinstance(target, dict):
                raise ConfigError("fracture recipe: target must be a path or primitive")
            if int(b.get("fragment_count", 0)) < 1:
                raise ConfigError("fracture recipe: fragment_count must be >= 1")

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode("utf-8")).hexdigest()


def load_config(path: str | Path, overrides: list[str] = ()) -> JobConfig:
    """Read YAML/JSON config and apply --set dotted-path overrides."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config parse error: {exc}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key, _, value = item.partition("=")
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = yaml.safe_load(value)
    return JobConfig.from_dict(raw)


# ----------------------------------------------------------------------
# recipe helpers

def _primitive_mesh(cfg: dict) -> TriMesh:
    kind = cfg.get("type", "box")
    if kind == "box":
        return make_box(cfg.get("half_extents", (0.5, 0.5, 0.5)))
    if kind == "sphere":
        return make_uv_sphere(float(cfg.get("radius", 0.5)),
                              int(cfg.get("segments", 12)), int(cfg.get("rings", 6)))
    if kind == "icosahedron":
        return make_icosahedron(float(cfg.get("radius", 0.5)))
    raise ConfigError(f"unknown primitive {kind!r}")


def _force_fields(cfg_list) -> list:
    fields = []
    for f in cfg_list or [{"type": "gravity"}]:
        kind = f.get("type")
        if kind == "gravity":
            fields.append(dyn.Gravity(np.asarray(f.get("g", (0.0, 0.0, -9.81)))))
        elif kind == "wind":
            fields.append(dyn.Wind(np.asarray(f["velocity"], dtype=float),
                                   float(f["coefficient"])))
        elif kind == "drag":
            fields.append(dyn.Drag(float(f["coefficient"])))
        else:
            raise ConfigError(f"unknown force field {kind!r}")
    return fields


def _vary_material(mat: ast.Material, sigma: float, key: int) -> ast.Material:
    """Per-scene structural variant: perturb displacement/normal maps."""
    if sigma <= 0.0:
        return mat
    out = ast.Material(name=mat.name, base_color=mat.base_color,
                       albedo_texture=mat.albedo_texture,
                       displacement_map=mat.displacement_map,
                       normal_map=mat.normal_map,
                       displacement_strength=mat.displacement_strength,
                       normal_strength=mat.normal_strength)
    if mat.displacement_map is not None:
        out.displacement_map = ast.perturb_map(mat.displacement_map, sigma,
                                               seeding.mix64(key, "disp"))
    if mat.normal_map is not None:
        out.normal_map = ast.perturb_map(mat.normal_map, sigma,
                                         seeding.mix64(key, "nrm"))
    return out


def _centered(mesh: TriMesh) -> tuple[TriMesh, np.ndarray]:
    c = mesh_centroid(mesh)
    out = mesh.copy()
    out.positions = mesh.positions - c
    return out, c


def _ground_entity_and_body(world: dyn.World, half=(20.0, 20.0, 0.5)):
    body = world.add_body(dyn.RigidBody(
        body_id=world.allocate_id(), shape=Box(half), mass=0.0,
        position=np.array([0.0, 0.0, -half[2]]),
        restitution=0.5, friction=0.8))
    mesh = make_box(half)
    mat = ast.Material(base_color=(0.45, 0.45, 0.47))
    return body, mesh, mat


def _default_camera(cfg: dict, recipe: str, center, distance: float) -> dict:
    out = dict(cfg)
    if "pose" not in out:
        c = np.asarray(center, dtype=float)
        if recipe == "city":
            pos = c + np.array([-0.9 * distance, -1.2 * distance, 0.8 * distance])
        else:
            pos = c + np.array([0.0, -distance, 0.55 * distance])
        out["pose"] = {"position": pos.tolist(), "look_at": c.tolist()}
    return out


# ----------------------------------------------------------------------
# recipes: each returns a ready-to-render Scene

def build_pile_scene(cfg: JobConfig, scene_seed: int) -> Scene:
    b = cfg.recipe_block
    pairs = ast.load_asset_list(b["asset_list"])
    if not pairs:
        raise ConfigError("asset list is empty")
    count = int(b.get("body_count", 5))
    spawn = b.get("spawn", {})
    lo = np.asarray(spawn.get("min", (-1.5, -1.5, 1.0)), dtype=float)
    hi = np.asarray(spawn.get("max", (1.5, 1.5, 4.0)), dtype=float)
    world = dyn.World(fields=_force_fields(b.get("fields")))
    meshes: dict[int, TriMesh] = {}
    mats: dict[int, ast.Material] = {}
    labels: dict[int, str] = {}

    if b.get("ground", True):
        gbody, gmesh, gmat = _ground_entity_and_body(world)
        meshes[gbody.body_id] = gmesh
        mats[gbody.body_id] = gmat
        labels[gbody.body_id] = "ground"

    gen = seeding.rng(scene_seed, "pile_spawn")
    sigma = cfg.texture_noise_sigma
    for i in range(count):
        mesh, material = pairs[i % len(pairs)]
        material = _vary_material(material, sigma, seeding.mix64(scene_seed, "tex", i))
        if material.displacement_map is not None and mesh.uvs is not None:
            mesh = ast.apply_displacement(mesh, material)
        mesh_local, _ = _centered(mesh)
        pos = lo + gen.random(3) * (hi - lo)
        quat = quat_normalize(gen.normal(size=4))
        body = world.add_body(dyn.RigidBody(
            body_id=world.allocate_id(),
            shape=ConvexHullShape(mesh_local.positions),
            mass=float(b.get("mass", 1.0)),
            position=pos, orientation=quat,
            restitution=float(b.get("restitution", 0.4)),
            friction=float(b.get("friction", 0.6)),
            collision_margin=float(b.get("collision_margin", 0.0))))
        meshes[body.body_id] = mesh_local
        mats[body.body_id] = material
        labels[body.body_id] = "object"

    tl = cfg.timeline
    traj = dyn.simulate(world, duration=(tl["frames"] + 1) / tl["fps"],
                        frame_rate=tl["fps"],
                        substeps=int(cfg.physics.get("substeps", 10)))
    entities = [Entity(body_id, meshes[body_id], mats[body_id],
                       labels[body_id], static_pose())
                for body_id in sorted(meshes)]
    scene = _scene_shell(cfg, entities, center=(0, 0, 1.0), distance=7.0)
    bake_trajectory(scene, traj)
    return scene


def build_fracture_scene(cfg: JobConfig, scene_seed: int) -> Scene:
    b = cfg.recipe_block
    target_cfg = b.get("target")
    if isinstance(target_cfg, str):
        target_mesh = ast.load_obj(target_cfg)
    else:
        target_mesh = _primitive_mesh(target_cfg or {})
    target_local, _ = _centered(target_mesh)

    world = dyn.World(fields=_force_fields(b.get("fields")))
    meshes: dict[int, TriMesh] = {}
    mats: dict[int, ast.Material] = {}
    labels: dict[int, str] = {}

    gbody, gmesh, gmat = _ground_entity_and_body(world)
    meshes[gbody.body_id] = gmesh
    mats[gbody.body_id] = gmat
    labels[gbody.body_id] = "ground"

    material = _vary_material(ast.Material(base_color=(0.7, 0.55, 0.4)),
                              cfg.texture_noise_sigma,
                              seeding.mix64(scene_seed, "tex"))
    z0 = -target_local.positions[:, 2].min()
    target = world.add_body(dyn.RigidBody(
        body_id=world.allocate_id(),
        shape=ConvexHullShape(target_local.positions),
        mass=float(b.get("mass", 1.0)),
        position=np.asarray(b.get("position", (0.0, 0.0, z0)), dtype=float),
        restitution=float(b.get("restitution", 0.3)),
        friction=float(b.get("friction", 0.6)),
        collision_margin=float(b.get("collision_margin", 0.0))))
    meshes[target.body_id] = target_local
    mats[target.body_id] = material
    labels[target.body_id] = "object"

    proj_cfg = b.get("projectile", {})
    shape_cfg = proj_cfg.get("shape", {"type": "sphere", "radius": 0.15})
    if shape_cfg.get("type") == "box":
        pshape = Box(tuple(shape_cfg.get("half_extents", (0.1, 0.1, 0.1))))
        pmesh = make_box(pshape.half_extents)
    else:
        r = float(shape_cfg.get("radius", 0.15))
        pshape = Sphere(r)
        pmesh = make_uv_sphere(r, 10, 5)
    projectile = world.add_body(dyn.RigidBody(
        body_id=world.allocate_id(), shape=pshape,
        mass=float(proj_cfg.get("mass", 2.0)),
        position=np.asarray(proj_cfg.get("position", (0.0, -3.0, 0.6)), dtype=float),
        linear_velocity=np.asarray(proj_cfg.get("velocity", (0.0, 10.0, 0.0)),
                                   dtype=float),
        restitution=0.3, friction=0.4))
    meshes[projectile.body_id] = pmesh
    mats[projectile.body_id] = ast.Material(base_color=(0.3, 0.3, 0.35))
    labels[projectile.body_id] = "projectile"

    specs = {target.body_id: frac.FractureSpec(
        fragment_count=int(b.get("fragment_count", 8)),
        seed=seeding.mix64(scene_seed, "voronoi"),
        impulse_threshold=float(b.get("impulse_threshold", 0.0)),
        inherit_velocity=bool(b.get("inherit_velocity", True)))}
    archive = dict(meshes)  # every mesh that ever existed, for the scene graph

    def on_step(w: dyn.World):
        if not specs:
            return
        events = frac.apply_fracture_trigger(w, w.last_contacts, specs, meshes)
        for event in events:
            specs.pop(event.parent_id, None)
            for child in event.child_ids:
                archive[child] = meshes[child]
                mats[child] = material
                labels[child] = "fragment"

    tl = cfg.timeline
    traj = dyn.simulate(world, duration=(tl["frames"] + 1) / tl["fps"],
                        frame_rate=tl["fps"],
                        substeps=int(cfg.physics.get("substeps", 10)),
                        on_step=on_step)
    entities = [Entity(body_id, archive[body_id], mats[body_id],
                       labels.get(body_id, "fragment"), static_pose())
                for body_id in sorted(archive)]
    scene = _scene_shell(cfg, entities, center=(0, 0, 0.6), distance=5.0)
    bake_trajectory(scene, traj)
    return scene


def build_city_scene(cfg: JobConfig, scene_seed: int) -> Scene:
    b = cfg.recipe_block
    doc = osm.load_osm(b["osm_path"])
    if b.get("origin"):
        origin = tuple(b["origin"])
    elif doc.nodes:
        lats = [ll[0] for ll in doc.nodes.values()]
        lons = [ll[1] for ll in doc.nodes.values()]
        origin = (sum(lats) / len(lats), sum(lons) / len(lons))
    else:
        origin = (0.0, 0.0)
    smap = osm.build_semantic_map(doc, origin)
    city = citygen.generate_city(smap, build_prop_library(), scene_seed)
    entities = [Entity(instance_id, mesh, _city_material(label), label, static_pose())
                for mesh, label, instance_id in city.meshes]
    lo, hi = city.bounds
    center = (lo + hi) / 2.0
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1], 10.0))
    scene = _scene_shell(cfg, entities, center=center.tolist(),
                         distance=0.6 * extent)
    weather = scene.weather
    if weather.lighting == "night":
        street = [p.position for p in city.placements
                  if p.prop_kind.value == "street_light"]
        scene.lights = render.preset_lights(weather, street)
    return scene


_CITY_COLORS = {
    "building": (0.72, 0.66, 0.58), "road": (0.22, 0.22, 0.24),
    "highway": (0.18, 0.18, 0.2), "pedestrian_path": (0.55, 0.5, 0.45),
    "water": (0.15, 0.3, 0.5), "forest": (0.1, 0.3, 0.12),
    "vegetation": (0.25, 0.45, 0.2), "ground": (0.35, 0.4, 0.3),
    "railway": (0.3, 0.28, 0.26),
}


def _city_material(label: str) -> ast.Material:
    return ast.Material(base_color=_CITY_COLORS.get(label, (0.6, 0.6, 0.6)))


def _scene_shell(cfg: JobConfig, entities: list[Entity], center, distance) -> Scene:
    tl = cfg.timeline
    supersample = max(1, int(tl.get("event_supersample", 0)))
    timeline = Timeline(frame_rate=float(tl["fps"]), frame_count=int(tl["frames"]),
                        supersample=supersample,
                        events=int(tl.get("event_supersample", 0)) >= 1)
    weather = render.WeatherState(**cfg.weather)
    cameras = []
    for i, c in enumerate(cfg.cameras):
        cam_cfg = _default_camera(c, cfg.recipe, center, distance)
        cam_cfg.setdefault("camera_id", f"cam{i:02d}")
        cameras.append(rig_from_config(cam_cfg))
    scene = Scene(entities=entities, lights=render.preset_lights(weather),
                  cameras=cameras, timeline=timeline, weather=weather,
                  event_threshold=float(cfg.event.get("threshold", 0.2)),
                  event_noise_sigma=float(cfg.event.get("noise_sigma", 0.0)))
    scene.validate()
    return scene


_BUILDERS = {"city": build_city_scene, "pile": build_pile_scene,
             "fracture": build_fracture_scene}


# ----------------------------------------------------------------------
# generation

def generate_scene(cfg: JobConfig, index: int) -> dict:
    """Build, render and write one scene; returns its manifest entry."""
    scene_seed = seeding.mix64(cfg.seed, "scene", index)
    scene_dir = f"scene_{index:04d}"
    scene = _BUILDERS[cfg.recipe](cfg, scene_seed)
    samples_lens = int(cfg.render_opts.get("samples_lens", 1))
    samples_time = int(cfg.render_opts.get("samples_time", 1))
    frame_count = scene.timeline.frame_count
    for rig in scene.cameras:
        for fi in range(frame_count):
            frame = render.render_frame(scene, rig, fi, lights=scene.lights,
                                        seed=scene_seed,
                                        samples_lens=samples_lens,
                                        samples_time=samples_time)
            write_frame_bundle(frame, cfg.output_root,
                               f"{scene_dir}/{rig.camera_id}")
    return {"index": index, "seed": scene_seed, "status": "ok",
            "dir": scene_dir, "frames": frame_count,
            "cameras": len(scene.cameras)}


def _scene_worker(args) -> dict:
    raw, index = args
    cfg = JobConfig.from_dict(raw)
    try:
        return generate_scene(cfg, index)
    except Exception as exc:  # noqa: BLE001 - scene failures must not kill the batch
        return {"index": index,
                "seed": seeding.mix64(cfg.seed, "scene", index),
                "status": "failed", "dir": f"scene_{index:04d}",
                "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc(limit=5)}


def _worker_count(n_scenes: int) -> int:
    env = os.environ.get("WORLDFORGE_THREADS")
    cap = int(env) if env else 1
    return max(1, min(cap, n_scenes))


def run_generate(cfg: JobConfig, resume: bool = False) -> dict:
    """Generate the whole dataset; returns the manifest dict.

    Per-scene failures are recorded and do not stop the batch.  With
    resume=True, scenes already marked ok in an existing manifest (for the
    same resolved config) are skipped.
    """
    cfg.output_root.mkdir(parents=True, exist_ok=True)
    manifest_path = cfg.output_root / "manifest.json"
    done: dict[int, dict] = {}
    if resume and manifest_path.exists():
        old = json.loads(manifest_path.read_text(encoding="utf-8"))
        if old.get("config_hash") == cfg.config_hash():
            done = {s["index"]: s for s in old.get("scenes", [])
                    if s.get("status") == "ok"}
    todo = [i for i in range(cfg.scene_count) if i not in done]
    workers = _worker_count(len(todo))
    results: list[dict] = []
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scene_worker,
                                    [(cfg.raw, i) for i in todo]))
    else:
        results = [_scene_worker((cfg.raw, i)) for i in todo]
    scenes = sorted((list(done.values()) + results), key=lambda s: s["index"])
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "config": cfg.raw,
        "config_hash": cfg.config_hash(),
        "scenes": scenes,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True),
                             encoding="utf-8")
    return manifest


# ----------------------------------------------------------------------
# evaluation

def run_eval(pred_dir: str | Path, gt_dir: str | Path) -> dict:
    """Mean end-point error between matching .flo trees."""
    pred_dir = Path(pred_dir)
    gt_dir = Path(gt_dir)
    gt_files = sorted(p.relative_to(gt_dir) for p in gt_dir.rglob("*.flo"))
    if not gt_files:
        raise MissingPair(f"no .flo files under {gt_dir}")
    rows = []
    total = 0.0
    for rel in gt_files:
        pred_path = pred_dir / rel
        if not pred_path.exists():
            raise MissingPair(f"prediction missing for {rel}")
        mean, _ = epe(read_flo(pred_path), read_flo(gt_dir / rel))
        rows.append({"frame": str(rel), "epe": mean})
        total += mean
    return {"pairs": rows, "mean_epe": total / len(rows), "count": len(rows)}
