"""Small vector, quaternion and 2D polygon toolbox shared across modules.

Quaternions are stored (w, x, y, z).  Polygons are (n, 2) float arrays
without a repeated closing vertex.
"""
from __future__ import annotations

import math

import numpy as np


# ----------------------------------------------------------------------
# vectors

def unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


# ----------------------------------------------------------------------
# quaternions (w, x, y, z)

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0:
        return QUAT_IDENTITY.copy()
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return QUAT_IDENTITY.copy()
    half = 0.5 * angle
    s = math.sin(half) / n
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(np.asarray(q, dtype=float))
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate one vector or an (n, 3) batch by q."""
    m = quat_to_matrix(q)
    return np.asarray(v, dtype=float) @ m.T


def quat_integrate(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """Advance orientation by the quaternion exponential of omega*dt."""
    w = np.asarray(omega, dtype=float)
    angle = np.linalg.norm(w) * dt
    if angle == 0.0:
        return np.asarray(q, dtype=float).copy()
    dq = quat_from_axis_angle(w, angle)
    return quat_normalize(quat_mul(dq, q))


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Quaternion (w, x, y, z) of a rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        return quat_normalize(np.array([
            0.25 * s, (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]))
    i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = math.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 1e-30)) * 2.0
    q = np.empty(4)
    q[0] = (m[k, j] - m[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (m[j, i] + m[i, j]) / s
    q[1 + k] = (m[k, i] + m[i, k]) / s
    return quat_normalize(q)


def quat_nlerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    if np.dot(a, b) < 0.0:
        b = -b
    return quat_normalize((1.0 - u) * a + u * b)


def quat_slerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    d = float(np.dot(a, b))
    if d < 0.0:
        b, d = -b, -d
    if d > 0.9995:
        return quat_normalize((1.0 - u) * a + u * b)
    theta = math.acos(min(1.0, d))
    sa = math.sin((1.0 - u) * theta)
    sb = math.sin(u * theta)
    return quat_normalize((sa * a + sb * b) / math.sin(theta))


# ----------------------------------------------------------------------
# 2D polygons

def signed_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise winding."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def ensure_ccw(poly: np.ndarray) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    if signed_area(p) < 0.0:
        return p[::-1].copy()
    return p


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    area = 0.5 * np.sum(cross)
    if abs(area) < 1e-12:
        return p.mean(axis=0)
    cx = np.sum((p[:, 0] + q[:, 0]) * cross) / (6.0 * area)
    cy = np.sum((p[:, 1] + q[:, 1]) * cross) / (6.0 * area)
    return np.array([cx, cy])


def point_in_polygon(point: np.ndarray, poly: np.ndarray) -> bool:
    """Even-odd rule; boundary points count as inside."""
    x, y = float(point[0]), float(point[1])
    inside = False
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            t = (y - y0) / (y1 - y0)
            xi = x0 + t * (x1 - x0)
            if x < xi:
                inside = not inside
            elif abs(x - xi) < 1e-12:
                return True
    return inside


def point_segment_distance(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(point - a))
    t = np.clip(np.dot(point - a, ab) / denom, 0.0, 1.0)
    return float(np.linalg.norm(point - (a + t * ab)))


def segment_intersection(p0, p1, q0, q1, tol: float = 1e-12):
    """Transversal intersection point of two segments, or None.

    Collinear overlaps and shared endpoints do not count as transversal.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d1 = p1 - p0
    d2 = q1 - q0
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < tol:
        return None
    r = q0 - p0
    t = (r[0] * d2[1] - r[1] * d2[0]) / denom
    s = (r[0] * d1[1] - r[1] * d1[0]) / denom
    eps = 1e-9
    if eps < t < 1.0 - eps and eps < s < 1.0 - eps:
        return p0 + t * d1
    return None


def _segments_properly_cross(p0, p1, q0, q1) -> bool:
    return segment_intersection(p0, p1, q0, q1) is not None


def polygon_is_simple(poly: np.ndarray) -> bool:
    """True when no two non-adjacent edges cross and no zero-length edges."""
    p = np.asarray(poly, dtype=float)
    n = len(p)
    if n < 3:
        return False
    edges = [(p[i], p[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        if np.allclose(edges[i][0], edges[i][1]):
            return False
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_properly_cross(*edges[i], *edges[j]):
                return False
    return True


def ear_clip(poly: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple CCW polygon; returns vertex-index triples."""
    p = np.asarray(poly, dtype=float)
    n = len(p)
    if n < 3:
        return []
    idx = list(range(n))
    tris: list[tuple[int, int, int]] = []

    def cross_z(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    guard = 0
    while len(idx) > 3 and guard < 4 * n * n:
        guard += 1
        m = len(idx)
        clipped = False
        for k in range(m):
            i0, i1, i2 = idx[(k - 1) % m], idx[k], idx[(k + 1) % m]
            a, b, c = p[i0], p[i1], p[i2]
            if cross_z(a, b, c) <= 1e-14:
                continue  # reflex or degenerate corner
            ear = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                q = p[j]
                # inside-triangle test via three cross products
                if (cross_z(a, b, q) >= -1e-14 and cross_z(b, c, q) >= -1e-14
                        and cross_z(c, a, q) >= -1e-14):
                    ear = False
                    break
            if ear:
                tris.append((i0, i1, i2))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            # numerically stuck (near-degenerate remainder): fan the rest
            break
    if len(idx) >= 3:
        for k in range(1, len(idx) - 1):
            tris.append((idx[0], idx[k], idx[k + 1]))
    return tris


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns CCW hull vertices."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    if len(pts) <= 2:
        return pts

    def half(seq):
        out: list[np.ndarray] = []
        for q in seq:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (q[1] - o[1]) - (a[1] - o[1]) * (q[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(q)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def oriented_bounding_box(points: np.ndarray):
    """Minimum-area oriented box of 2D points.

    Returns (center, axes, half_extents) with axes rows unit and half_extents
    sorted so axes[0] is the longer direction.
    """
    hull = convex_hull_2d(points)
    if len(hull) == 1:
        return hull[0], np.eye(2), np.zeros(2)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        ax = d / np.linalg.norm(d)
        return (hull[0] + hull[1]) / 2, np.array([ax, [-ax[1], ax[0]]]), \
            np.array([np.linalg.norm(d) / 2, 0.0])
    best = None
    n = len(hull)
    for i in range(n):
        e = hull[(i + 1) % n] - hull[i]
        L = np.linalg.norm(e)
        if L < 1e-15:
            continue
        ux = e / L
        uy = np.array([-ux[1], ux[0]])
        proj_x = hull @ ux
        proj_y = hull @ uy
        w = proj_x.max() - proj_x.min()
        h = proj_y.max() - proj_y.min()
        area = w * h
        if best is None or area < best[0]:
            cx = (proj_x.max() + proj_x.min()) / 2
            cy = (proj_y.max() + proj_y.min()) / 2
            best = (area, cx * ux + cy * uy, ux, uy, w / 2, h / 2)
    _, center, ux, uy, hx, hy = best
    if hx >= hy:
        return center, np.array([ux, uy]), np.array([hx, hy])
    return center, np.array([uy, -ux]), np.array([hy, hx])
