import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexgen import shapes
from dexgen.errors import DegenerateCloud, EmptyInput
from dexgen.geom import (
    ConvexBody,
    PointCloud,
    Pose,
    aabb_center,
    closest_points_on_mesh,
    convex_hull,
    fit_plane_normal,
    pose_compose,
    principal_axis_length,
    rotation_about,
    rotation_geodesic_angle,
)

from conftest import poses, random_pose


def rot(axis, deg):
    return Pose.from_rt(rotation_about(axis, np.deg2rad(deg)))


# --- pose_compose ---------------------------------------------------------

def test_identity_compose():
    p = pose_compose(Pose.identity(), Pose.identity())
    assert p.allclose(Pose.identity(), atol=0.0)


def test_compose_with_inverse_is_identity(rng):
    for _ in range(200):
        p = random_pose(rng)
        assert (p @ p.inverse()).allclose(Pose.identity(), atol=1e-9)
        assert (p.inverse() @ p).allclose(Pose.identity(), atol=1e-9)


def test_compose_hand_computed():
    # Rz(90) maps (1,0,0) -> (0,1,0)
    a = rot([0, 0, 1], 90)
    b = Pose(translation=[1.0, 0.0, 0.0])
    c = pose_compose(a, b)
    assert rotation_geodesic_angle(c, a) < 1e-12
    np.testing.assert_allclose(c.translation, [0.0, 1.0, 0.0], atol=1e-12)


def test_quaternion_is_canonical_and_unit(rng):
    for _ in range(100):
        p = random_pose(rng) @ random_pose(rng)
        assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-9
        assert p.rotation[0] >= 0.0


@settings(max_examples=200, deadline=None)
@given(poses(), poses(), poses())
def test_compose_associative(a, b, c):
    left = (a @ b) @ c
    right = a @ (b @ c)
    assert left.allclose(right, atol=1e-9)


def test_matrix_round_trip(rng):
    for _ in range(100):
        p = random_pose(rng)
        q = Pose.from_matrix(p.matrix)
        np.testing.assert_allclose(q.as_array(), p.as_array(), atol=1e-12)


# --- rotation_geodesic_angle ---------------------------------------------

def test_geodesic_examples():
    R = rotation_about([1, 2, 3], 0.7)
    assert rotation_geodesic_angle(R, R) == pytest.approx(0.0, abs=1e-12)
    assert rotation_geodesic_angle(np.eye(3), rotation_about([0, 0, 1], np.pi / 2)) == pytest.approx(np.pi / 2)
    a = rotation_about([1, 0, 0], np.deg2rad(30))
    b = rotation_about([1, 0, 0], np.deg2rad(150))
    assert rotation_geodesic_angle(a, b) == pytest.approx(2 * np.pi / 3)


@settings(max_examples=200, deadline=None)
@given(poses(), poses())
def test_geodesic_symmetric_nonnegative(a, b):
    x = rotation_geodesic_angle(a, b)
    y = rotation_geodesic_angle(b, a)
    assert x >= 0.0 and x <= np.pi + 1e-12
    assert x == pytest.approx(y, abs=1e-12)


def test_geodesic_zero_iff_equal_up_to_sign():
    q = np.array([0.3, -0.4, 0.5, 0.2])
    assert rotation_geodesic_angle(q, -q) == pytest.approx(0.0, abs=1e-12)
    assert rotation_geodesic_angle(q, q + [0, 0, 0, 1e-3]) > 0.0


# --- principal_axis_length -----------------------------------------------

def test_pca_segment_trimmed():
    x = np.linspace(0.0, 0.2, 1000)
    pts = np.c_[x, np.zeros_like(x), np.zeros_like(x)]
    assert principal_axis_length(pts) == pytest.approx(0.196, abs=1e-9)


def test_pca_segment_uniform_random(rng):
    x = rng.uniform(0.0, 0.2, 1000)
    pts = np.c_[x, np.zeros_like(x), np.zeros_like(x)]
    # sample percentile noise of a 1000-point uniform draw is ~1e-3
    assert principal_axis_length(pts) == pytest.approx(0.196, abs=3e-3)


def test_pca_cube_corners_is_diagonal():
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    assert principal_axis_length(corners) == pytest.approx(np.sqrt(3.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
def test_pca_scales_linearly(s, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(300, 3)) * [3.0, 1.0, 0.5]
    assert principal_axis_length(pts * s) == pytest.approx(s * principal_axis_length(pts), rel=1e-9)


def test_pca_degenerate():
    with pytest.raises(DegenerateCloud):
        principal_axis_length(np.ones((10, 3)))


# --- fit_plane_normal ----------------------------------------------------

def test_plane_axis_aligned(rng):
    xy = rng.uniform(-0.3, 0.3, size=(500, 2))
    pts = np.c_[xy, np.full(500, 0.5)]
    np.testing.assert_allclose(fit_plane_normal(pts), [0, 0, -1], atol=1e-12)


def test_plane_noisy_within_one_degree(rng):
    xy = rng.uniform(-0.3, 0.3, size=(5000, 2))
    pts = np.c_[xy, 0.5 + rng.normal(0, 0.002, 5000)]
    n = fit_plane_normal(pts)
    assert np.degrees(np.arccos(np.clip(n @ [0, 0, -1], -1, 1))) < 1.0


def test_plane_oblique_faces_camera(rng):
    u = rng.uniform(-1, 1, size=(400, 2))
    # points on x + z = 1
    pts = np.c_[u[:, 0], u[:, 1], 1.0 - u[:, 0]]
    n = fit_plane_normal(pts)
    np.testing.assert_allclose(n, -np.array([1, 0, 1]) / np.sqrt(2), atol=1e-10)
    assert n @ (-pts.mean(axis=0)) > 0


def test_plane_collinear():
    t = np.linspace(0, 1, 20)
    with pytest.raises(DegenerateCloud):
        fit_plane_normal(np.c_[t, 2 * t, 3 * t])


def test_plane_invariant_to_permutation_and_in_plane_shift(rng):
    xy = rng.uniform(-0.3, 0.3, size=(300, 2))
    pts = np.c_[xy, 0.6 + 0.3 * xy[:, 0] + rng.normal(0, 1e-3, 300)]
    n = fit_plane_normal(pts)
    np.testing.assert_allclose(fit_plane_normal(pts[rng.permutation(300)]), n, atol=1e-12)
    shift = np.cross(n, [0, 1, 0]) * 0.05
    np.testing.assert_allclose(fit_plane_normal(pts + shift), n, atol=1e-9)


# --- convex_hull -----------------------------------------------------------

def test_hull_tetrahedron():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    h = convex_hull(pts)
    assert len(h.faces) == 4
    assert sorted(map(tuple, h.vertices)) == sorted(map(tuple, pts))


def test_hull_cube_excludes_interior():
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    pts = np.vstack([corners, [[0.5, 0.5, 0.5]]])
    h = convex_hull(pts)
    assert len(h.faces) == 12
    assert len(h.vertices) == 8
    assert not any(np.allclose(v, 0.5) for v in h.vertices)


def test_hull_sphere_area(rng):
    d = rng.normal(size=(1000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    h = convex_hull(d)
    assert h.area() == pytest.approx(4 * np.pi, rel=0.05)


def test_hull_outward_and_contains_inputs(rng):
    pts = rng.normal(size=(200, 3))
    body = ConvexBody(pts)
    assert np.all(body.contains(pts, tol=1e-9))
    # outward orientation: centroid strictly inside every half-space
    assert np.all(body.normals @ pts.mean(0) - body.offsets < 0)


def test_hull_idempotent(rng):
    pts = rng.normal(size=(200, 3))
    h1 = convex_hull(pts)
    h2 = convex_hull(h1.vertices)
    assert sorted(map(tuple, h1.vertices)) == sorted(map(tuple, h2.vertices))
    assert len(h1.faces) == len(h2.faces)


def test_hull_coplanar():
    xy = np.random.default_rng(0).normal(size=(20, 2))
    with pytest.raises(DegenerateCloud):
        convex_hull(np.c_[xy, np.zeros(20)])


# --- aabb_center ------------------------------------------------------------

def test_aabb_examples():
    np.testing.assert_allclose(aabb_center([np.array([[1.0, 2.0, 3.0]])]), [1, 2, 3])
    np.testing.assert_allclose(aabb_center([np.array([[0.0, 0, 0], [2, 4, 6]])]), [1, 2, 3])
    clouds = [
        PointCloud([[-1.0, 0.5, 0.5], [0.0, 1.0, 1.0]]),
        PointCloud([[3.0, 0.0, 0.0]]),
        shapes.box([1.0, 1.0, 1.0]).scaled(1.0, None),
    ]
    # joint min (-1,-0.5,-0.5)... recomputed by hand below
    allpts = np.vstack([clouds[0].points, clouds[1].points, clouds[2].vertices])
    expect = 0.5 * (allpts.min(0) + allpts.max(0))
    np.testing.assert_allclose(aabb_center(clouds), expect)


def test_aabb_three_clouds_hand_scan():
    a = np.array([[-1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    b = np.array([[3.0, 2.0, 0.5]])
    c = np.array([[1.0, 0.5, 2.0]])
    np.testing.assert_allclose(aabb_center([a, b, c]), [1, 1, 1])


def test_aabb_empty():
    with pytest.raises(EmptyInput):
        aabb_center([])
    with pytest.raises(EmptyInput):
        aabb_center([np.zeros((0, 3))])


# --- distance queries -------------------------------------------------------

def test_closest_point_matches_dense_sampling(rng):
    mesh = shapes.box([0.1, 0.2, 0.3])
    q = rng.normal(size=(30, 3)) * 0.3
    cp, d = closest_points_on_mesh(q, mesh)
    dense = mesh.sample_surface(200000, rng).points
    for i in range(len(q)):
        brute = np.min(np.linalg.norm(dense - q[i], axis=1))
        assert d[i] <= brute + 1e-12
        assert d[i] == pytest.approx(brute, abs=2e-3)


def test_signed_distance_sphere_body():
    body = ConvexBody(shapes.icosphere(0.05, 3))
    sd, g = body.signed_distance(np.array([[0, 0, 0.1], [0, 0, 0.0]]), return_gradient=True)
    assert sd[0] == pytest.approx(0.05, abs=2e-4)
    assert sd[1] == pytest.approx(-0.05, abs=5e-4)  # faces sit inside the radius
    np.testing.assert_allclose(g[0], [0, 0, 1], atol=1e-2)


def test_penetration_depth_boxes():
    a = ConvexBody(shapes.box([0.1, 0.1, 0.1]))
    b = a.transformed(Pose(translation=[0.095, 0, 0]))
    assert a.penetration_depth(b) == pytest.approx(0.005, abs=1e-12)
    c = a.transformed(Pose(translation=[0.2, 0, 0]))
    assert a.penetration_depth(c) == 0.0
