import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgcorner.geometry import (
    BOUNDARY,
    INSIDE,
    OUTSIDE,
    ConvexCone,
    GeometryError,
    Grid,
    PolygonalInclusion,
    ProbeDirectionError,
    TruncatedCone,
    cone_membership,
    corner_cones_of,
    rho_of,
)


def make_cone(theta=math.pi / 4, h=1.0, axis=(1.0, 0.0), apex=(0.0, 0.0)):
    return TruncatedCone(ConvexCone(np.array(apex), np.array(axis), theta), h)


class TestConeTypes:
    def test_axis_must_be_unit(self):
        with pytest.raises(GeometryError):
            ConvexCone(np.zeros(2), np.array([1.0, 0.01]), 0.5)

    @pytest.mark.parametrize("theta", [0.0, math.pi / 2, -0.1, 2.0])
    def test_half_angle_open_interval(self, theta):
        with pytest.raises(GeometryError):
            ConvexCone(np.zeros(2), np.array([1.0, 0.0]), theta)

    def test_radius_positive(self):
        with pytest.raises(GeometryError):
            make_cone(h=0.0)

    def test_volume_and_boundary_pieces(self):
        c2 = make_cone(theta=0.3, h=2.0)
        assert c2.volume() == pytest.approx(0.3 * 4.0)
        assert c2.boundary_area() == pytest.approx((4.0, 2 * 0.3 * 2.0))
        c3 = make_cone(theta=0.3, h=2.0, axis=(0.0, 0.0, 1.0), apex=(0.0, 0.0, 0.0))
        assert c3.volume() == pytest.approx(2 * math.pi * (1 - math.cos(0.3)) * 8 / 3)


class TestConeMembership:
    def test_apex_inside(self):
        c = make_cone()
        assert cone_membership(c, c.apex)

    def test_on_axis_interior(self):
        c = make_cone(h=2.0)
        assert cone_membership(c, c.apex + 1.0 * c.axis)

    def test_beyond_radius(self):
        c = make_cone(h=2.0)
        assert not cone_membership(c, c.apex + 4.0 * c.axis)

    def test_rim_is_closed_angle_open_radius(self):
        c = make_cone(theta=math.pi / 4)
        rim = np.array([math.cos(math.pi / 4), math.sin(math.pi / 4)])
        assert cone_membership(c, 0.5 * rim)
        assert not cone_membership(c, 1.0 * rim)
        assert not cone_membership(c, 0.5 * np.array([math.cos(0.8), math.sin(0.8)]))


class TestCornerCones:
    def test_unit_square_origin_vertex(self):
        poly = PolygonalInclusion(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
        c = corner_cones_of(poly)[0]
        np.testing.assert_allclose(c.apex, [0, 0])
        np.testing.assert_allclose(c.axis, [math.sqrt(2) / 2, math.sqrt(2) / 2], atol=1e-15)
        assert c.half_angle == pytest.approx(math.pi / 4, abs=1e-14)

    def test_equilateral_triangle(self):
        poly = PolygonalInclusion(np.array([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]]))
        for c in corner_cones_of(poly):
            assert c.half_angle == pytest.approx(math.pi / 6, abs=1e-13)

    def test_pentagon_with_170_degree_corner(self):
        # vertex B has interior angle 170 degrees between BA and BC
        a = math.radians(170)
        B = np.array([0.0, 0.0])
        A = np.array([-1.0, 0.0])
        C = np.array([math.cos(math.pi - a), math.sin(math.pi - a)])
        verts = np.array([A, B, C, C + [0.0, 1.5], A + [0.0, 1.5]])
        poly = PolygonalInclusion(verts)
        idx = int(np.argmin(np.linalg.norm(poly.vertices - B, axis=1)))
        cone = poly.corner_cones[idx]
        e1 = (A - B) / np.linalg.norm(A - B)
        e2 = (C - B) / np.linalg.norm(C - B)
        assert cone.half_angle == pytest.approx(0.5 * math.acos(e1 @ e2), abs=1e-12)
        assert cone.half_angle == pytest.approx(math.radians(85), abs=1e-12)

    def test_reflex_vertex_rejected(self):
        arrow = np.array([[0, 0], [2, 0], [2, 2], [1, 1], [0, 2]], float)
        with pytest.raises(GeometryError):
            PolygonalInclusion(arrow)

    def test_self_intersecting_rejected(self):
        with pytest.raises(GeometryError):
            PolygonalInclusion(np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float))

    def test_two_vertices_rejected(self):
        with pytest.raises(GeometryError):
            PolygonalInclusion(np.array([[0, 0], [1, 1]], float))

    def test_orientation_normalised(self):
        cw = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], float)
        poly = PolygonalInclusion(cw)
        v = poly.vertices
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        assert area > 0

    def test_corner_radius_square(self, square):
        assert [square.corner_radius(i) for i in range(4)] == pytest.approx([0.5] * 4)


class TestRho:
    @pytest.mark.parametrize("theta", [math.pi / 6, math.pi / 4, math.pi / 3])
    def test_minus_axis_gives_cos_theta(self, theta):
        c = make_cone(theta=theta)
        assert rho_of(c, -c.axis) == pytest.approx(math.cos(theta))

    def test_plus_axis_fails(self):
        c = make_cone()
        with pytest.raises(ProbeDirectionError):
            rho_of(c, c.axis)

    def test_rim_orthogonal_fails(self):
        c = make_cone(theta=math.pi / 4)
        xi = np.array([math.cos(3 * math.pi / 4), math.sin(3 * math.pi / 4)])
        with pytest.raises(ProbeDirectionError):
            rho_of(c, xi)

    @given(st.floats(0.05, 1.5), st.floats(0.0, 1.0))
    def test_monotone_in_half_angle(self, theta, shrink):
        big = make_cone(theta=theta)
        small = make_cone(theta=theta * (1 - 0.99 * shrink))
        xi = -big.axis
        assert rho_of(small, xi) >= rho_of(big, xi) - 1e-15

    @given(st.floats(0.1, 1.4), st.floats(-0.5, 0.5))
    @settings(max_examples=30)
    def test_grid_nodes_respect_rho(self, theta, tilt):
        c = make_cone(theta=theta, apex=(0.013, -0.021))
        xi = -np.array([math.cos(tilt), math.sin(tilt)])
        try:
            rho = rho_of(c, xi)
        except ProbeDirectionError:
            return
        g = Grid((-1.0, 1.0, -1.0, 1.0), 40)
        pts = g.points.reshape(-1, 2)
        pts = pts[c.contains(pts)]
        d = pts - c.apex
        r = np.linalg.norm(d, axis=1)
        d, r = d[r > 0], r[r > 0]
        assert np.all(d @ xi / r <= -rho + 1e-10)


@st.composite
def convex_polygons(draw):
    k = draw(st.integers(3, 7))
    gaps = np.array(draw(st.lists(st.floats(0.3, 1.0), min_size=k, max_size=k)))
    ang = np.cumsum(gaps / gaps.sum() * 2 * math.pi)
    rad = np.array(draw(st.lists(st.floats(0.5, 1.0), min_size=k, max_size=k)))
    pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    return pts


@given(convex_polygons(), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_cones_reproduce_polygon_near_vertices(pts, seed):
    try:
        poly = PolygonalInclusion(pts)
    except GeometryError:
        return  # random radii can produce reflex corners; only convex ones are admissible
    rng = np.random.default_rng(seed)
    rad = poly.min_edge_length() / 4
    for v, cone in zip(poly.vertices, poly.corner_cones):
        r = rad * np.sqrt(rng.uniform(0, 1, 200))
        t = rng.uniform(0, 2 * math.pi, 200)
        x = v + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
        tc = TruncatedCone(cone, rad * 1.0001)
        in_poly = poly.contains(x, tol=0.0)
        in_cone = tc.contains(x)
        # points right on an edge can flip either way under round-off
        edge_d = np.min([np.abs((b - a)[0] * (x - a)[:, 1] - (b - a)[1] * (x - a)[:, 0]) / np.linalg.norm(b - a) for a, b in poly.edges()], axis=0)
        ok = edge_d > 1e-9
        assert np.array_equal(in_poly[ok], in_cone[ok])


class TestGrid:
    def test_classification_partition(self, square):
        g = Grid((-1, 1, -1, 1), 16)
        lab = g.classify(square)
        assert set(np.unique(lab)) == {BOUNDARY, OUTSIDE, INSIDE}
        inside = lab == INSIDE
        assert np.all(square.contains(g.points[inside]))
        # nodes exactly on the square's edges count as inside
        i = int(np.argmin(np.abs(g.x - 0.5)))
        j = int(np.argmin(np.abs(g.y - 0.0)))
        assert lab[i, j] == INSIDE
        assert g.complement_connected(lab)

    def test_annulus_complement_disconnected(self):
        g = Grid((-1, 1, -1, 1), 32)
        lab = np.full(g.shape, OUTSIDE, np.int8)
        X, Y = g.mesh
        r = np.hypot(X, Y)
        lab[(r > 0.4) & (r < 0.6)] = INSIDE
        assert not g.complement_connected(lab)

    def test_inclusion_must_be_strictly_inside(self):
        g = Grid((-1, 1, -1, 1), 8)
        poly = PolygonalInclusion(np.array([[-1, -0.5], [0.5, -0.5], [0.5, 0.5]], float))
        with pytest.raises(GeometryError):
            g.classify(poly)

    def test_boundary_nodes_ccw_without_corners(self):
        g = Grid((0, 2, 0, 1), 4, 2)
        ii, jj, nrm, s = g.boundary_nodes()
        assert ii.size == 2 * (4 + 2) - 4
        assert np.all(np.diff(s) > 0)
        # normals are axis-aligned unit vectors pointing out of the box
        pts = g.points[ii, jj]
        centre = np.array([1.0, 0.5])
        assert np.all(np.sum(nrm * (pts - centre), axis=1) > 0)

    def test_resolution_validation(self):
        with pytest.raises(GeometryError):
            Grid((0, 1, 0, 1), 1)
        with pytest.raises(GeometryError):
            Grid((1, 0, 0, 1), 8)
