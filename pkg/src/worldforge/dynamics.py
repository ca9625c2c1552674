"""Deterministic fixed-step rigid-body simulation.

Semi-implicit Euler integration, gravity/wind/drag force fields, impulse
contact resolution with restitution and Coulomb friction, and per-frame
trajectory recording.  Trajectories are a pure function of the inputs:
bodies are always processed in id order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collision import (Box, CollisionShape, Contact, ConvexHullShape, Sphere,
                        broad_phase, narrow_phase, shape_inertia, shape_volume)
from .geom import quat_integrate, quat_normalize, quat_to_matrix

SOLVER_ITERATIONS = 10
BAUMGARTE = 0.2
PENETRATION_SLOP = 0.005


class NonFiniteState(RuntimeError):
    pass


class UnknownBody(KeyError):
    pass


@dataclass
class Gravity:
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)


@dataclass
class Wind:
    velocity: np.ndarray
    coefficient: float  # kg/m

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.coefficient < 0:
            raise ValueError("wind coefficient must be >= 0")


@dataclass
class Drag:
    coefficient: float  # kg/s

    def __post_init__(self):
        if self.coefficient < 0:
            raise ValueError("drag coefficient must be >= 0")


ForceField = Gravity | Wind | Drag


@dataclass
class RigidBody:
    body_id: int
    shape: CollisionShape
    mass: float = 0.0  # 0 => static
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    restitution: float = 0.5
    friction: float = 0.5
    collision_margin: float = 0.0
    inertia_body: np.ndarray | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = quat_normalize(np.asarray(self.orientation, dtype=float))
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float)
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float)
        if self.mass < 0:
            raise ValueError("mass must be >= 0")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")
        if self.friction < 0:
            raise ValueError("friction must be >= 0")
        if self.is_static:
            self.linear_velocity = np.zeros(3)
            self.angular_velocity = np.zeros(3)
        elif self.inertia_body is None:
            self.inertia_body = shape_inertia(self.shape, self.mass)

    @property
    def is_static(self) -> bool:
        return self.mass == 0.0

    @property
    def inv_mass(self) -> float:
        return 0.0 if self.is_static else 1.0 / self.mass

    def inv_inertia_world(self) -> np.ndarray:
        if self.is_static:
            return np.zeros((3, 3))
        m = quat_to_matrix(self.orientation)
        return m @ np.linalg.inv(self.inertia_body) @ m.T

    def velocity_at(self, point: np.ndarray) -> np.ndarray:
        return self.linear_velocity + np.cross(self.angular_velocity,
                                               point - self.position)


@dataclass
class World:
    bodies: dict[int, RigidBody] = field(default_factory=dict)
    fields: list[ForceField] = field(default_factory=list)
    next_id: int = 1
    last_contacts: list[Contact] = field(default_factory=list)

    def add_body(self, body: RigidBody) -> RigidBody:
        if body.body_id in self.bodies:
            raise ValueError(f"duplicate body id {body.body_id}")
        self.bodies[body.body_id] = body
        self.next_id = max(self.next_id, body.body_id + 1)
        return body

    def allocate_id(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i

    def sorted_bodies(self) -> list[RigidBody]:
        return [self.bodies[i] for i in sorted(self.bodies)]


def accumulate_forces(body: RigidBody, fields: list[ForceField]) -> np.ndarray:
    """Net force: m*g + c_wind*(v_wind - v) - c_drag*v, summed over fields."""
    f = np.zeros(3)
    for fld in fields:
        if isinstance(fld, Gravity):
            f = f + body.mass * fld.g
        elif isinstance(fld, Wind):
            f = f + fld.coefficient * (fld.velocity - body.linear_velocity)
        elif isinstance(fld, Drag):
            f = f - fld.coefficient * body.linear_velocity
    return f


def detect_contacts(bodies) -> list[Contact]:
    """All contacts between the given bodies, sorted by (id_a, id_b)."""
    body_list = sorted(bodies, key=lambda b: b.body_id)
    contacts: list[Contact] = []
    for a, b in broad_phase(body_list):
        if a.is_static and b.is_static:
            continue
        contacts.extend(narrow_phase(a, b))
    contacts.sort(key=lambda c: (c.body_a, c.body_b))
    return contacts


def _tangent_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(n, a)
    t1 = t1 / np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def resolve_contacts(world: World, contacts: list[Contact], dt: float) -> World:
    """Sequential impulses with accumulated clamping, then positional correction.

    Restitution pairs take min(e_a, e_b); friction sqrt(mu_a * mu_b).  Each
    contact's accumulated normal impulse is written back for reporting.
    """
    if not contacts:
        return world
    solver = []
    for c in contacts:
        a = world.bodies[c.body_a]
        b = world.bodies[c.body_b]
        n = c.normal
        r_a = c.point - a.position
        r_b = c.point - b.position
        inv_ia = a.inv_inertia_world()
        inv_ib = b.inv_inertia_world()
        def eff_mass(axis):
            ta = np.cross(inv_ia @ np.cross(r_a, axis), r_a)
            tb = np.cross(inv_ib @ np.cross(r_b, axis), r_b)
            return a.inv_mass + b.inv_mass + float(np.dot(axis, ta + tb))
        k_n = eff_mass(n)
        t1, t2 = _tangent_basis(n)
        k_t1, k_t2 = eff_mass(t1), eff_mass(t2)
        v_rel0 = float(np.dot(b.velocity_at(c.point) - a.velocity_at(c.point), n))
        e = min(a.restitution, b.restitution)
        bounce = e * max(-v_rel0, 0.0)
        mu = math.sqrt(a.friction * b.friction)
        solver.append({"c": c, "a": a, "b": b, "n": n, "r_a": r_a, "r_b": r_b,
                       "inv_ia": inv_ia, "inv_ib": inv_ib,
                       "k_n": k_n, "t1": t1, "t2": t2, "k_t1": k_t1, "k_t2": k_t2,
                       "bounce": bounce, "mu": mu,
                       "j_n": 0.0, "j_t1": 0.0, "j_t2": 0.0})

    def apply(a, b, r_a, r_b, inv_ia, inv_ib, impulse):
        a.linear_velocity = a.linear_velocity - impulse * a.inv_mass
        a.angular_velocity = a.angular_velocity - inv_ia @ np.cross(r_a, impulse)
        b.linear_velocity = b.linear_velocity + impulse * b.inv_mass
        b.angular_velocity = b.angular_velocity + inv_ib @ np.cross(r_b, impulse)

    for _ in range(SOLVER_ITERATIONS):
        for s in solver:
            a, b = s["a"], s["b"]
            n, r_a, r_b = s["n"], s["r_a"], s["r_b"]
            v_rel = b.velocity_at(s["c"].point) - a.velocity_at(s["c"].point)
            v_n = float(np.dot(v_rel, n))
            if s["k_n"] > 0.0:
                dj = (s["bounce"] - v_n) / s["k_n"]
                j_new = max(s["j_n"] + dj, 0.0)
                dj = j_new - s["j_n"]
                s["j_n"] = j_new
                if dj != 0.0:
                    apply(a, b, r_a, r_b, s["inv_ia"], s["inv_ib"], dj * n)
            limit = s["mu"] * s["j_n"]
            for t_key, k_key, j_key in (("t1", "k_t1", "j_t1"), ("t2", "k_t2", "j_t2")):
                if s[k_key] <= 0.0:
                    continue
                t = s[t_key]
                v_rel = b.velocity_at(s["c"].point) - a.velocity_at(s["c"].point)
                v_t = float(np.dot(v_rel, t))
                dj = -v_t / s[k_key]
                j_new = float(np.clip(s[j_key] + dj, -limit, limit))
                dj = j_new - s[j_key]
                s[j_key] = j_new
                if dj != 0.0:
                    apply(a, b, r_a, r_b, s["inv_ia"], s["inv_ib"], dj * t)

    for s in solver:
        s["c"].impulse = s["j_n"]

    # positional correction: deepest point per pair, split by inverse mass
    deepest: dict[tuple[int, int], Contact] = {}
    for c in contacts:
        key = (c.body_a, c.body_b)
        if key not in deepest or c.penetration > deepest[key].penetration:
            deepest[key] = c
    for (ia, ib), c in sorted(deepest.items()):
        a, b = world.bodies[ia], world.bodies[ib]
        total_w = a.inv_mass + b.inv_mass
        if total_w == 0.0:
            continue
        corr = BAUMGARTE * max(c.penetration - PENETRATION_SLOP, 0.0)
        a.position = a.position - c.normal * (corr * a.inv_mass / total_w)
        b.position = b.position + c.normal * (corr * b.inv_mass / total_w)
    return world


def step(world: World, dt: float) -> World:
    """One semi-implicit Euler step with collision resolution.

    The step's contacts (with resolved impulses) are left in
    world.last_contacts for fracture triggers and trajectory recording.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    for body in world.sorted_bodies():
        if body.is_static:
            continue
        f = accumulate_forces(body, world.fields)
        body.linear_velocity = body.linear_velocity + (f / body.mass) * dt
    for body in world.sorted_bodies():
        if body.is_static:
            continue
        body.position = body.position + body.linear_velocity * dt
        body.orientation = quat_integrate(body.orientation, body.angular_velocity, dt)
    contacts = detect_contacts(world.sorted_bodies())
    resolve_contacts(world, contacts, dt)
    world.last_contacts = contacts
    for body in world.sorted_bodies():
        ok = (np.isfinite(body.position).all()
              and np.isfinite(body.linear_velocity).all()
              and np.isfinite(body.orientation).all()
              and np.isfinite(body.angular_velocity).all())
        if not ok:
            raise NonFiniteState(f"body {body.body_id} went non-finite")
    return world


@dataclass
class FrameSample:
    frame: int
    time: float
    poses: dict[int, tuple[np.ndarray, np.ndarray]]
    contacts: list[tuple[int, int, float]]  # (a, b, impulse)


@dataclass
class Trajectory:
    frame_rate: float
    frames: list[FrameSample] = field(default_factory=list)

    def body_ids(self) -> list[int]:
        ids: set[int] = set()
        for fr in self.frames:
            ids.update(fr.poses)
        return sorted(ids)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for fr in self.frames:
                rec = {
                    "frame": fr.frame,
                    "time": fr.time,
                    "bodies": [{"id": i, "position": list(map(float, p)),
                                "quaternion": list(map(float, q))}
                               for i, (p, q) in sorted(fr.poses.items())],
                    "contacts": [{"a": a, "b": b, "impulse": imp}
                                 for a, b, imp in fr.contacts],
                }
                fh.write(json.dumps(rec) + "\n")


def simulate(world: World, duration: float, frame_rate: float,
             substeps: int = 10, report_threshold: float = 0.0,
             on_step=None) -> Trajectory:
    """Advance the world and record poses at frame boundaries.

    Samples the pose at t = k/frame_rate before advancing, so a 1 s run at
    24 fps yields 24 samples.  on_step(world) runs after every substep
    (fracture triggers hook in here).  Bitwise deterministic.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if frame_rate < 1 or substeps < 1:
        raise ValueError("rates must be >= 1")
    n_frames = round(duration * frame_rate)
    dt = 1.0 / (frame_rate * substeps)
    traj = Trajectory(frame_rate=frame_rate)
    for k in range(n_frames):
        frame_contacts: list[tuple[int, int, float]] = []
        poses = {b.body_id: (b.position.copy(), b.orientation.copy())
                 for b in world.sorted_bodies()}
        traj.frames.append(FrameSample(k, k / frame_rate, poses, frame_contacts))
        for _ in range(substeps):
            step(world, dt)
            for c in world.last_contacts:
                if c.impulse > report_threshold:
                    frame_contacts.append((c.body_a, c.body_b, c.impulse))
            if on_step is not None:
                on_step(world)
    return traj
