import numpy as np
import pytest

from dexgen import shapes
from dexgen.align import (
    align_render_align,
    build_world_frame,
    refine_hand_translation,
    visible_subset,
)
from dexgen.errors import DegenerateCloud, DegenerateHands
from dexgen.geom import PointCloud, Pose, TriMesh, convex_hull, rotation_about

from conftest import random_pose
from oracles import brute_visible_vertices, front_facing_samples

VIEW = np.array([0.0, 0.0, 1.0])


def fib_sphere(n=5000, radius=1.0):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    th = np.pi * (1 + 5 ** 0.5) * i
    return convex_hull(radius * np.c_[np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])


# --- visible_subset -----------------------------------------------------------------

def test_single_triangle_all_visible():
    m = TriMesh([[0, 0, 1], [1, 0, 1], [0, 1, 1]], [[0, 1, 2]])
    assert visible_subset(m, VIEW, 0.1).tolist() == [0, 1, 2]


def test_two_squares_front_occludes_back():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    v = np.vstack([np.c_[sq, np.ones(4)], np.c_[sq, 2 * np.ones(4)]])
    f = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]])
    idx = visible_subset(TriMesh(v, f), VIEW, 0.1)
    assert idx.tolist() == [0, 1, 2, 3]


def test_sphere_hemisphere_and_matches_ray_oracle():
    m = fib_sphere(5000)
    idx = visible_subset(m, VIEW, 0.02)
    frac = len(idx) / len(m.vertices)
    assert 0.4 <= frac <= 0.6
    # rim vertices on front-facing faces sit a hair above the equator
    assert m.vertices[idx, 2].max() <= 0.05
    oracle = brute_visible_vertices(m, VIEW)
    agree = np.isin(np.arange(5000), idx) == np.isin(np.arange(5000), oracle)
    assert agree.mean() >= 0.998


def test_nonconvex_occlusion_matches_oracle(rng):
    # a small box hovering in front of a large plate, viewed obliquely
    plate = shapes.box([0.3, 0.3, 0.01], divisions=6).transformed(Pose(translation=[0, 0, 0.1]))
    cube = shapes.box([0.05, 0.05, 0.05], divisions=3)
    v = np.vstack([plate.vertices, cube.vertices])
    f = np.vstack([plate.faces, cube.faces + len(plate.vertices)])
    m = TriMesh(v, f)
    d = np.array([0.2, -0.1, 1.0])
    d /= np.linalg.norm(d)
    got = visible_subset(m, d, 0.005)
    assert set(got.tolist()) == set(brute_visible_vertices(m, d).tolist())


def test_raster_mode_is_available():
    m = fib_sphere(2000)
    idx = visible_subset(m, VIEW, 0.05, method="raster")
    assert 0 < len(idx) < 2000


# --- align_render_align ---------------------------------------------------------------

def test_self_alignment(rng):
    m = shapes.ellipsoid([0.09, 0.04, 0.02], 4)
    cloud = m.sample_surface(20000, rng)
    t, s = align_render_align(m, cloud, VIEW)
    assert np.linalg.norm(t) < 0.02
    assert 0.95 <= s <= 1.05


def test_sphere_half_of_double_scale(rng):
    m = fib_sphere(3000, radius=0.05)
    big = fib_sphere(3000, radius=0.10).transformed(Pose(translation=[0.1, -0.05, 0.9]))
    cloud = front_facing_samples(big, 20000, VIEW, rng)
    t, s = align_render_align(m, cloud, VIEW)
    assert s == pytest.approx(0.5, rel=0.03)


def test_hand_axis_ratio_two(rng):
    # 0.18 m hand observed as a 0.09 m cloud of its camera-facing surface
    mesh = shapes.box([0.18, 0.08, 0.02], divisions=12)
    cloud = front_facing_samples(mesh, 50000, VIEW, rng) * 0.5 + [0.0, 0.0, 0.5]
    _, s = align_render_align(mesh, cloud, VIEW)
    # the trimmed span of a dense cloud loses about 2% of a flat face's extent,
    # while the face's edge vertices carry more than 1% of the area weight
    assert s == pytest.approx(2.0, rel=0.03)


@pytest.mark.parametrize("mesh", [shapes.box([0.18, 0.08, 0.02], divisions=12),
                                  shapes.ellipsoid([0.09, 0.04, 0.02], 4)], ids=["box", "ellipsoid"])
def test_uneven_tessellation_unbiased(mesh, rng):
    # vertices crowd the thin sides of both meshes; surface samples do not
    errs = []
    for _ in range(20):
        m = mesh.transformed(Pose(random_pose(rng).rotation))
        _, s = align_render_align(m, front_facing_samples(m, 3000, VIEW, rng), VIEW)
        errs.append(s - 1.0)
    assert abs(np.mean(errs)) < 0.02 and np.max(np.abs(errs)) < 0.03


def test_scale_equivariance(rng):
    m = shapes.ellipsoid([0.08, 0.03, 0.02], 3)
    cloud = front_facing_samples(m, 3000, VIEW, rng) * 1.7 + [0, 0, 1]
    _, s = align_render_align(m, cloud, VIEW)
    for c in (0.5, 1.3, 4.0):
        _, sc = align_render_align(m, cloud * c, VIEW)
        assert sc == pytest.approx(s / c, rel=1e-12)


def test_refine_pure_shift():
    mesh = shapes.ellipsoid([0.09, 0.04, 0.02], 3).transformed(Pose.from_rt(rotation_about([1, 1, 0], 0.4)))
    idx = visible_subset(mesh, VIEW, 0.005)
    cloud = mesh.vertices[idx] + [0.1, 0.0, 0.0]
    t = refine_hand_translation(mesh, cloud, VIEW)
    np.testing.assert_allclose(t, [0.1, 0.0, 0.0], atol=1e-6)


def test_refine_noisy_linear_track(rng):
    mesh = shapes.ellipsoid([0.09, 0.04, 0.015], 4)
    start, end = np.array([-0.2, 0.05, 0.7]), np.array([0.2, -0.05, 0.6])
    worst = 0.0
    for u in np.linspace(0, 1, 15):
        R = rotation_about([0.3, 1, 0.2], 0.8 * u)
        posed = mesh.transformed(Pose.from_rt(R))
        truth = start + u * (end - start)
        pts = front_facing_samples(posed, 1500, VIEW, rng) + truth + rng.normal(0, 0.003, (1500, 3))
        est = refine_hand_translation(posed, pts, VIEW)
        worst = max(worst, np.linalg.norm(est - truth))
    assert worst < 0.01


def test_refine_empty_cloud():
    with pytest.raises(DegenerateCloud):
        refine_hand_translation(shapes.box([0.1, 0.1, 0.1]), np.zeros((0, 3)), VIEW)


# --- build_world_frame -------------------------------------------------------------------

def table_scene(rng, noise=0.0, n=2000):
    """Camera looking down +z at a table 0.9 m away; hands at (+-0.2, 0, 0.8)."""
    xy = rng.uniform(-0.4, 0.4, size=(n, 2))
    table = np.c_[xy, 0.9 + rng.normal(0, noise, n) if noise else np.full(n, 0.9)]
    obj = shapes.box([0.06, 0.06, 0.06]).transformed(Pose(translation=[0.1, 0.05, 0.87]))
    return table, np.array([0.2, 0.0, 0.8]), np.array([-0.2, 0.0, 0.8]), obj


def test_world_frame_axis_aligned_example(rng):
    table, l, r, obj = table_scene(rng)
    wf = build_world_frame(PointCloud(table), l, r, [obj], workspace_x=0.6)
    R = wf.transform.R
    # z flips to face the camera and y points at the left hand; x = y cross z
    np.testing.assert_allclose(R, [[0, 1, 0], [1, 0, 0], [0, 0, -1]], atol=1e-12)
    c = wf.transform.apply(obj.vertices)
    center = 0.5 * (c.min(0) + c.max(0))
    assert center[0] == pytest.approx(0.6, abs=1e-12)
    assert center[1] == pytest.approx(0.0, abs=1e-12)
    assert center[2] == pytest.approx(0.03, abs=1e-12)  # resting on the table
    np.testing.assert_allclose(wf.transform.apply(table)[:, 2], 0.0, atol=1e-12)
    assert wf.transform.apply(l)[1] > 0


def test_world_frame_rotation_equivariance(rng):
    table, l, r, obj = table_scene(rng)
    base = build_world_frame(PointCloud(table), l, r, [obj]).transform.R
    for _ in range(20):
        Q = random_pose(rng).R
        wf = build_world_frame(PointCloud(table @ Q.T), Q @ l, Q @ r, [obj.vertices @ Q.T])
        np.testing.assert_allclose(wf.transform.R @ Q, base, atol=1e-6)


def test_world_frame_proper_rotation_random_scenes(rng):
    for _ in range(1000):
        pose = random_pose(rng, 0.3)
        pts = np.c_[rng.uniform(-0.4, 0.4, (60, 2)), rng.normal(0, 0.002, 60)]
        table = pose.apply(pts + [0, 0, 0.9])
        l, r = pose.apply(np.array([[0.2, 0.1, 0.8], [-0.2, -0.05, 0.8]]))
        wf = build_world_frame(PointCloud(table), l, r, [pose.apply(np.array([[0, 0, 0.85]]))])
        R = wf.transform.R
        assert np.abs(R @ R.T - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1) < 1e-9
        ax = np.c_[wf.x_axis_camera, wf.y_axis_camera, wf.table_normal_camera]
        assert np.abs(ax.T @ ax - np.eye(3)).max() < 1e-9


def test_world_frame_coincident_hands(rng):
    table, l, _, obj = table_scene(rng)
    with pytest.raises(DegenerateHands):
        build_world_frame(PointCloud(table), l, l + 1e-4, [obj])
