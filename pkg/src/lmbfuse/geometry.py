"""Rectangle corners and covered-area polygons in the local metric plane."""
from __future__ import annotations

import math

import numpy as np

from .errors import GeometryError, InvalidReferencePoint
from .types import CORNERS, ReferencePoint

# (delta, gamma) per corner: delta selects the left/right side, gamma front/back
_CORNER_SIGNS = {
    ReferencePoint.FL: (1.0, 1.0),
    ReferencePoint.FR: (-1.0, 1.0),
    ReferencePoint.BL: (1.0, -1.0),
    ReferencePoint.BR: (-1.0, -1.0),
}

POINT_REFLECTION = {
    ReferencePoint.FL: ReferencePoint.BR,
    ReferencePoint.BR: ReferencePoint.FL,
    ReferencePoint.FR: ReferencePoint.BL,
    ReferencePoint.BL: ReferencePoint.FR,
}


def corner_offset(zeta, heading, width, length) -> np.ndarray:
    """Vector from the rectangle center to corner ``zeta``.

    ``heading``, ``width`` and ``length`` may be arrays of equal shape, in
    which case the result has that shape plus a trailing axis of size 2.
    """
    try:
        delta, gamma = _CORNER_SIGNS[ReferencePoint(zeta)]
    except KeyError:
        raise InvalidReferencePoint(f"{ReferencePoint(zeta).name} is not a rectangle corner") from None
    c = np.cos(heading)
    s = np.sin(heading)
    dw = delta * np.asarray(width, dtype=float)
    gl = gamma * np.asarray(length, dtype=float)
    return 0.5 * np.stack([-s * dw + c * gl, c * dw + s * gl], axis=-1)


def rectangle_corners(mean) -> dict:
    """Corner positions of the rectangle described by a state mean."""
    cx, cy, heading = float(mean[0]), float(mean[1]), float(mean[2])
    width, length = float(mean[6]), float(mean[7])
    c, s = math.cos(heading), math.sin(heading)
    out = {}
    for z in CORNERS:
        delta, gamma = _CORNER_SIGNS[z]
        dw, gl = delta * width, gamma * length
        out[z] = np.array([cx + 0.5 * (-s * dw + c * gl), cy + 0.5 * (c * dw + s * gl)])
    return out


def candidate_reference_points(sensor_pos, mean, count: int = 3) -> list:
    """The ``count`` corners closest to the sensor, nearest first."""
    sx, sy = float(sensor_pos[0]), float(sensor_pos[1])
    corners = rectangle_corners(mean)
    dist = {z: math.hypot(p[0] - sx, p[1] - sy) for z, p in corners.items()}
    return sorted(CORNERS, key=lambda z: (dist[z], int(z)))[:count]


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12 and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12

    o1, o2, o3, o4 = orient(p1, p2, q1), orient(p1, p2, q2), orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and on_seg(p1, p2, q1))
        or (o2 == 0 and on_seg(p1, p2, q2))
        or (o3 == 0 and on_seg(q1, q2, p1))
        or (o4 == 0 and on_seg(q1, q2, p2))
    )


class CoveredArea:
    """Simple polygon declared by a sensor as its field of view.

    The polygon is closed implicitly; vertices may be given in either
    orientation.
    """

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("a covered area needs at least three 2D vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite polygon vertex")
        x, y = v[:, 0], v[:, 1]
        area = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if abs(area) <= 1e-12:
            raise GeometryError("polygon has zero area")
        m = len(v)
        for i in range(m):
            for j in range(i + 1, m):
                if j == i + 1 or (i == 0 and j == m - 1):
                    continue
                if _segments_intersect(v[i], v[(i + 1) % m], v[j], v[(j + 1) % m]):
                    raise GeometryError("polygon is self-intersecting")
        v.setflags(write=False)
        self.vertices = v
        self.area = abs(area)
        self._a = v
        self._b = np.roll(v, -1, axis=0)
        self._ab = self._b - self._a
        self._ab2 = np.einsum("ij,ij->i", self._ab, self._ab)

    def __eq__(self, other):
        return isinstance(other, CoveredArea) and np.array_equal(self.vertices, other.vertices)

    def __repr__(self):
        return f"CoveredArea({self.vertices.tolist()!r})"

    @property
    def bounds(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))

    def boundary_distance(self, point) -> float:
        p = np.asarray(point, dtype=float)
        t = np.clip(np.einsum("ij,ij->i", p - self._a, self._ab) / self._ab2, 0.0, 1.0)
        closest = self._a + t[:, None] * self._ab
        return float(np.sqrt(np.min(np.sum((closest - p) ** 2, axis=1))))

    def contains(self, point) -> bool:
        """Even-odd ray cast; boundary points count as inside."""
        px, py = float(point[0]), float(point[1])
        inside = False
        ax, ay = self._a[:, 0], self._a[:, 1]
        bx, by = self._b[:, 0], self._b[:, 1]
        for i in range(len(ax)):
            if (ay[i] > py) != (by[i] > py):
                xc = ax[i] + (py - ay[i]) * (bx[i] - ax[i]) / (by[i] - ay[i])
                if px < xc:
                    inside = not inside
        return inside or self.boundary_distance(point) == 0.0


def signed_distance(point, area: CoveredArea) -> float:
    """Distance to the polygon boundary, negative inside and positive outside."""
    d = area.boundary_distance(point)
    if d == 0.0:
        return 0.0
    return -d if area.contains(point) else d
