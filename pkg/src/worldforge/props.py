"""Built-in low-poly street/roof prop meshes.

Each prop sits on z=0 at its own origin and faces +x at yaw 0.  Shipping
these keeps city generation hermetic: no downloads, no external assets.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .mesh import TriMesh, make_box, make_cylinder, make_uv_sphere, merged


class PropKind(Enum):
    TrafficLight = "traffic_light"
    StopSign = "stop_sign"
    Tree = "tree"
    Bench = "bench"
    StreetLight = "street_light"
    Antenna = "antenna"
    Vent = "vent"
    Chimney = "chimney"


def _traffic_light() -> TriMesh:
    pole = make_cylinder(0.08, 3.2, n_seg=8)
    head = make_box((0.15, 0.15, 0.45), center=(0.12, 0.0, 3.45))
    return merged([pole, head])


def _stop_sign() -> TriMesh:
    pole = make_cylinder(0.05, 2.1, n_seg=8)
    ang = np.pi / 8 + 2 * np.pi * np.arange(8) / 8
    plate_pts = np.stack([np.cos(ang) * 0.35, np.sin(ang) * 0.35], axis=1)
    # thin octagonal plate extruded along x
    front = np.column_stack([np.full(8, 0.06), plate_pts[:, 0], plate_pts[:, 1] + 2.4])
    back = front.copy()
    back[:, 0] = 0.02
    pos = np.vstack([front, back])
    tris = []
    for k in range(1, 7):
        tris.append((0, k, k + 1))          # front face (+x out)
        tris.append((8, 8 + k + 1, 8 + k))  # back face
    for k in range(8):
        a, b = k, (k + 1) % 8
        tris.append((a, 8 + a, b))
        tris.append((b, 8 + a, 8 + b))
    plate = TriMesh(pos, np.array(tris, dtype=np.int32))
    return merged([pole, plate])


def _tree() -> TriMesh:
    trunk = make_cylinder(0.15, 1.8, n_seg=8)
    canopy = make_uv_sphere(1.1, n_seg=8, n_ring=5, center=(0.0, 0.0, 2.6))
    return merged([trunk, canopy])


def _bench() -> TriMesh:
    seat = make_box((0.8, 0.25, 0.03), center=(0.0, 0.0, 0.45))
    leg_l = make_box((0.04, 0.2, 0.21), center=(-0.65, 0.0, 0.21))
    leg_r = make_box((0.04, 0.2, 0.21), center=(0.65, 0.0, 0.21))
    back = make_box((0.8, 0.03, 0.2), center=(0.0, -0.22, 0.75))
    return merged([seat, leg_l, leg_r, back])


def _street_light() -> TriMesh:
    pole = make_cylinder(0.07, 4.5, n_seg=8)
    arm = make_box((0.5, 0.05, 0.04), center=(0.5, 0.0, 4.52))
    lamp = make_box((0.18, 0.1, 0.06), center=(0.95, 0.0, 4.44))
    return merged([pole, arm, lamp])


def _antenna() -> TriMesh:
    mast = make_cylinder(0.04, 2.8, n_seg=6)
    cross = make_box((0.35, 0.02, 0.02), center=(0.0, 0.0, 2.5))
    return merged([mast, cross])


def _vent() -> TriMesh:
    body = make_box((0.4, 0.3, 0.25), center=(0.0, 0.0, 0.25))
    hood = make_box((0.45, 0.35, 0.05), center=(0.0, 0.0, 0.55))
    return merged([body, hood])


def _chimney() -> TriMesh:
    shaft = make_box((0.25, 0.25, 0.6), center=(0.0, 0.0, 0.6))
    cap = make_box((0.32, 0.32, 0.05), center=(0.0, 0.0, 1.25))
    return merged([shaft, cap])


_BUILDERS = {
    PropKind.TrafficLight: _traffic_light,
    PropKind.StopSign: _stop_sign,
    PropKind.Tree: _tree,
    PropKind.Bench: _bench,
    PropKind.StreetLight: _street_light,
    PropKind.Antenna: _antenna,
    PropKind.Vent: _vent,
    PropKind.Chimney: _chimney,
}


def build_prop_library() -> dict[PropKind, TriMesh]:
    return {kind: builder() for kind, builder in _BUILDERS.items()}
