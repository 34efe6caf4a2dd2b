"""Cones, polygonal inclusions and structured grids.

Everything here is immutable after construction.  Points are numpy arrays
whose last axis is the spatial dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

ANGLE_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid geometric input (bad cone, non-simple or reflex polygon)."""


class ProbeDirectionError(ValueError):
    """The probe direction does not point away from the whole cone."""


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class ConvexCone:
    apex: np.ndarray
    axis: np.ndarray
    half_angle: float

    def __post_init__(self):
        apex = np.asarray(self.apex, dtype=float)
        axis = np.asarray(self.axis, dtype=float)
        if apex.ndim != 1 or apex.shape != axis.shape or apex.size < 2:
            raise GeometryError("apex and axis must be points of the same dimension >= 2")
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise GeometryError(f"cone axis must be a unit vector, got norm {np.linalg.norm(axis)!r}")
        if not 0.0 < self.half_angle < np.pi / 2:
            raise GeometryError(f"half_angle must lie in (0, pi/2), got {self.half_angle!r}")
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "half_angle", float(self.half_angle))

    @classmethod
    def from_direction(cls, apex, direction, half_angle) -> "ConvexCone":
        return cls(np.asarray(apex, dtype=float), _unit(direction), half_angle)

    @property
    def dim(self) -> int:
        return self.apex.size

    def truncate(self, radius: float) -> "TruncatedCone":
        return TruncatedCone(self, radius)


@dataclass(frozen=True)
class TruncatedCone:
    """The cone intersected with the open ball of ``radius`` about the apex."""

    cone: ConvexCone
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError(f"radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "radius", float(self.radius))

    apex = property(lambda self: self.cone.apex)
    axis = property(lambda self: self.cone.axis)
    half_angle = property(lambda self: self.cone.half_angle)
    dim = property(lambda self: self.cone.dim)

    def contains(self, x) -> np.ndarray | bool:
        """Closed angular condition and open radial condition; the apex is inside."""
        d = np.asarray(x, dtype=float) - self.apex
        r = np.linalg.norm(d, axis=-1)
        along = d @ self.axis
        inside = (along >= r * np.cos(self.half_angle) - ANGLE_TOL * np.maximum(r, 1.0)) & (r < self.radius)
        return inside if inside.ndim else bool(inside)

    def volume(self) -> float:
        """Lebesgue measure (area in 2D)."""
        h, t = self.radius, self.half_angle
        if self.dim == 2:
            return t * h * h
        if self.dim == 3:
            return 2.0 * np.pi * (1.0 - np.cos(t)) * h**3 / 3.0
        raise NotImplementedError("volume only for n = 2, 3")

    def boundary_area(self) -> tuple[float, float]:
        """(lateral, cap) measures of the boundary pieces."""
        h, t = self.radius, self.half_angle
        if self.dim == 2:
            return 2.0 * h, 2.0 * t * h
        if self.dim == 3:
            return np.pi * h * h * np.sin(t), 2.0 * np.pi * (1.0 - np.cos(t)) * h * h
        raise NotImplementedError("boundary pieces only for n = 2, 3")


def cone_membership(cone: TruncatedCone, x) -> bool:
    return bool(cone.contains(np.asarray(x, dtype=float)))


def rho_of(cone: ConvexCone | TruncatedCone, xi) -> float:
    """Smallest value of ``-xi . d`` over unit directions ``d`` in the cone.

    The largest ``xi . d`` is attained on the rim, at angular distance
    ``beta - theta`` from ``xi`` where ``beta`` is the angle between ``xi``
    and the axis.  Raises :class:`ProbeDirectionError` if it is not negative.
    """
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("xi must be a unit vector")
    beta = np.arccos(np.clip(xi @ cone.axis, -1.0, 1.0))
    rho = -np.cos(max(beta - cone.half_angle, 0.0))
    if rho <= 1e-14:
        raise ProbeDirectionError(
            f"xi makes angle {beta:.6g} with the axis; the cone rim reaches xi . d = {-rho:.3g} >= 0"
        )
    return float(rho)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _cross2(q2 - q1, p1 - q1)
    d2 = _cross2(q2 - q1, p2 - q1)
    d3 = _cross2(p2 - p1, q1 - p1)
    d4 = _cross2(p2 - p1, q2 - p1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True
    return False


def segment_distance(points, a, b) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    ab = b - a
    t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[..., None] * ab), axis=-1)


@dataclass(frozen=True)
class PolygonalInclusion:
    """Simple polygon with convex corners, stored counterclockwise."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise GeometryError("polygon vertices must be an (k, 2) array")
        if len(v) < 3:
            raise GeometryError("polygon needs >= 3 vertices")
        area = 0.5 * np.sum(_cross2(v, np.roll(v, -1, axis=0)))
        if abs(area) < 1e-14:
            raise GeometryError("polygon is degenerate (zero area)")
        if area < 0:
            v = v[::-1].copy()
        k = len(v)
        for i in range(k):
            for j in range(i + 1, k):
                if j == i + 1 or (i == 0 and j == k - 1):
                    continue
                if _segments_intersect(v[i], v[(i + 1) % k], v[j], v[(j + 1) % k]):
                    raise GeometryError(f"polygon edges {i} and {j} intersect")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        self.corner_cones  # reject reflex corners eagerly

    def __len__(self):
        return len(self.vertices)

    def edges(self):
        v = self.vertices
        return list(zip(v, np.roll(v, -1, axis=0)))

    @cached_property
    def corner_cones(self) -> tuple[ConvexCone, ...]:
        v = self.vertices
        cones = []
        for i, p in enumerate(v):
            prev, nxt = v[i - 1], v[(i + 1) % len(v)]
            e1, e2 = _unit(prev - p), _unit(nxt - p)
            turn = _cross2(p - prev, nxt - p)
            interior = np.arccos(np.clip(e1 @ e2, -1.0, 1.0))
            if turn <= 0 or interior >= np.pi - 1e-12:
                raise GeometryError(f"vertex {i} at {p.tolist()} is not a convex corner")
            cones.append(ConvexCone(p.copy(), _unit(e1 + e2), 0.5 * interior))
        return tuple(cones)

    def min_edge_length(self) -> float:
        return float(min(np.linalg.norm(b - a) for a, b in self.edges()))

    def corner_radius(self, i: int) -> float:
        """Half the distance from vertex ``i`` to the nearest non-adjacent edge."""
        k = len(self.vertices)
        p = self.vertices[i]
        dists = [
            float(segment_distance(p, a, b))
            for j, (a, b) in enumerate(self.edges())
            if j not in (i, (i - 1) % k)
        ]
        if not dists:  # triangle: opposite edge is the only non-adjacent one
            raise GeometryError("polygon has no non-adjacent edge")
        return 0.5 * min(dists)

    def corner_probe_regions(self) -> list[TruncatedCone]:
        return [TruncatedCone(c, self.corner_radius(i)) for i, c in enumerate(self.corner_cones)]

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        """Closed membership (points on the boundary count as inside)."""
        pts = np.asarray(x, dtype=float)
        px, py = pts[..., 0], pts[..., 1]
        inside = np.zeros(px.shape, dtype=bool)
        on_edge = np.zeros(px.shape, dtype=bool)
        for a, b in self.edges():
            crosses = (a[1] > py) != (b[1] > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= crosses & (px < xint)
            on_edge |= segment_distance(pts, a, b) <= tol
        return inside | on_edge


def corner_cones_of(poly: PolygonalInclusion) -> list[ConvexCone]:
    return list(poly.corner_cones)


BOUNDARY, OUTSIDE, INSIDE = 0, 1, 2


@dataclass(frozen=True)
class Grid:
    """Node-centred tensor grid on the box ``[x0, x1] x [y0, y1]``.

    Arrays are indexed ``[i, j]`` with ``i`` along x.
    """

    box: tuple[float, float, float, float]
    nx: int
    ny: int | None = None

    def __post_init__(self):
        ny = self.nx if self.ny is None else self.ny
        if self.nx < 2 or ny < 2:
            raise GeometryError("grid resolution must be >= 2 cells per axis")
        x0, x1, y0, y1 = map(float, self.box)
        if not (x1 > x0 and y1 > y0):
            raise GeometryError("box must have positive extent")
        object.__setattr__(self, "ny", int(ny))
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "box", (x0, x1, y0, y1))

    @property
    def shape(self):
        return (self.nx + 1, self.ny + 1)

    @property
    def hx(self):
        return (self.box[1] - self.box[0]) / self.nx

    @property
    def hy(self):
        return (self.box[3] - self.box[2]) / self.ny

    @cached_property
    def x(self):
        return np.linspace(self.box[0], self.box[1], self.nx + 1)

    @cached_property
    def y(self):
        return np.linspace(self.box[2], self.box[3], self.ny + 1)

    @cached_property
    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def points(self):
        X, Y = self.mesh
        return np.stack([X, Y], axis=-1)

    @cached_property
    def boundary_mask(self):
        b = np.zeros(self.shape, dtype=bool)
        b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = True
        return b

    def contains(self, pts, tol=1e-12):
        pts = np.asarray(pts, dtype=float)
        x0, x1, y0, y1 = self.box
        return (
            (pts[..., 0] >= x0 - tol) & (pts[..., 0] <= x1 + tol)
            & (pts[..., 1] >= y0 - tol) & (pts[..., 1] <= y1 + tol)
        )

    def classify(self, inclusion: PolygonalInclusion | None) -> np.ndarray:
        """Label every node BOUNDARY, OUTSIDE or INSIDE (the inclusion)."""
        labels = np.full(self.shape, OUTSIDE, dtype=np.int8)
        if inclusion is not None:
            x0, x1, y0, y1 = self.box
            v = inclusion.vertices
            if not (np.all(v[:, 0] > x0) and np.all(v[:, 0] < x1) and np.all(v[:, 1] > y0) and np.all(v[:, 1] < y1)):
                raise GeometryError("inclusion must lie strictly inside the domain box")
            tol = 1e-9 * min(self.hx, self.hy)
            inside = inclusion.contains(self.points, tol=tol)
            if np.any(inside & self.boundary_mask):
                raise GeometryError("inclusion touches the domain boundary")
            labels[inside] = INSIDE
        labels[self.boundary_mask] = BOUNDARY
        return labels

    def complement_connected(self, labels: np.ndarray) -> bool:
        _, count = ndimage.label(labels != INSIDE)
        return count == 1

    def boundary_nodes(self, include_corners: bool = False):
        """Boundary node indices ordered counterclockwise from ``(x0, y0)``.

        Returns ``(ii, jj, normals, arclength)``.  Box corners have no unique
        normal and are dropped unless ``include_corners``.
        """
        nx, ny = self.nx, self.ny
        ii, jj, nrm = [], [], []
        sides = [
            (range(0, nx), lambda k: (k, 0), (0.0, -1.0)),
            (range(0, ny), lambda k: (nx, k), (1.0, 0.0)),
            (range(nx, 0, -1), lambda k: (k, ny), (0.0, 1.0)),
            (range(ny, 0, -1), lambda k: (0, k), (-1.0, 0.0)),
        ]
        for rng, idx, n in sides:
            for k in rng:
                i, j = idx(k)
                ii.append(i)
                jj.append(j)
                nrm.append(n)
        ii, jj, nrm = np.array(ii), np.array(jj), np.array(nrm)
        pts = self.points[ii, jj]
        seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
        corner = ((ii == 0) | (ii == nx)) & ((jj == 0) | (jj == ny))
        if not include_corners:
            keep = ~corner
            ii, jj, nrm, s = ii[keep], jj[keep], nrm[keep], s[keep]
        return ii, jj, nrm, s
