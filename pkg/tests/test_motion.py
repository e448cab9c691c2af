import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexgen.errors import AssemblyGap
from dexgen.geom import Pose, rotation_geodesic_angle
from dexgen.motion import (
    MAX_STEP,
    MAX_TURN,
    AssemblyInputs,
    Frame,
    TrajectorySegment,
    assemble_demo,
    ee_target,
    grasped_intervals,
    hand_object_drift,
    interpolate_trajectory,
    max_wrist_step,
    relative_transform,
    slerp,
    transport_segments,
)
from dexgen.record import KIND_APPROACH, KIND_IDLE, KIND_TRANSPORT
from dexgen.schedule import ActionQueue

from conftest import poses, random_pose

J = 3


def close(a: Pose, b: Pose, tol=1e-9):
    return np.linalg.norm(a.translation - b.translation) <= tol and rotation_geodesic_angle(a, b) <= tol


# --- relative_transform / ee_target -----------------------------------------------------

def test_relative_transform_of_same_pose_is_identity(rng):
    p = random_pose(rng)
    assert close(relative_transform(p, p), Pose())


def test_relative_transform_pure_translation():
    T = relative_transform(Pose(), Pose(translation=[0.3, 0, 0]))
    np.testing.assert_allclose(T.translation, [0.3, 0, 0], atol=1e-15)
    assert T.angle() == 0.0


def test_relative_transform_in_rotated_frame():
    # by hand: R_z(90)^T (0, 1, 0) = (1, 0, 0)
    a = Pose.from_rotvec([0, 0, np.pi / 2])
    b = Pose.from_rotvec([0, 0, np.pi / 2], [0, 1, 0])
    T = relative_transform(a, b)
    np.testing.assert_allclose(T.translation, [1, 0, 0], atol=1e-12)
    assert T.angle() < 1e-12


def test_ee_target_identity_leaves_pose(rng):
    ee = random_pose(rng)
    assert close(ee_target(Pose(), ee), ee, 1e-12)
    assert close(ee_target(Pose(), ee, random_pose(rng)), ee, 1e-12)


def test_ee_target_lift(rng):
    ee = random_pose(rng)
    out = ee_target(Pose(translation=[0, 0, 0.1]), ee)
    np.testing.assert_allclose(out.translation - ee.translation, [0, 0, 0.1], atol=1e-12)
    assert rotation_geodesic_angle(out, ee) < 1e-12


def test_ee_target_lift_given_in_object_frame(rng):
    # same lift expressed as an object-frame transform of a rotated object
    obj = random_pose(rng)
    lifted = Pose(obj.rotation, obj.translation + [0, 0, 0.1])
    ee = random_pose(rng)
    out = ee_target(relative_transform(obj, lifted), ee, obj)
    np.testing.assert_allclose(out.translation - ee.translation, [0, 0, 0.1], atol=1e-12)
    assert rotation_geodesic_angle(out, ee) < 1e-9


@settings(max_examples=200, deadline=None)
@given(poses(2.0), poses(2.0), poses(2.0))
def test_round_trip_reproduces_object_pose(p_t, p_t2, ee):
    grasp = ee.inverse() @ p_t
    ee2 = ee_target(relative_transform(p_t, p_t2), ee, p_t)
    assert close(ee2 @ grasp, p_t2, 1e-9)


# --- interpolation ---------------------------------------------------------------------

def test_duration_one_gives_goal():
    a, b = Pose(), Pose.from_rotvec([0, 0.2, 0], [0.01, 0, 0])
    seg = interpolate_trajectory((a, np.zeros(J)), (b, np.ones(J)), 1)
    assert len(seg) == 1
    assert seg.wrists[0] is b
    assert np.array_equal(seg.joints[0], np.ones(J))


def test_equal_endpoints_constant(rng):
    p = random_pose(rng, 0.1)
    q = rng.normal(size=J)
    seg = interpolate_trajectory((p, q), (p, q), 7)
    assert len(seg) == 7
    for k in range(7):
        assert np.array_equal(seg.wrists[k].as_array(), p.as_array())
        assert np.array_equal(seg.joints[k], q)


def test_endpoints_bit_exact_with_start(rng):
    a, b = random_pose(rng, 0.1), random_pose(rng, 0.1)
    qa, qb = rng.normal(size=J), rng.normal(size=J)
    seg = interpolate_trajectory((a, qa), (b, qb), 12, include_start=True)
    assert seg.wrists[0] is a and seg.wrists[-1] is b
    assert np.array_equal(seg.joints[0], qa) and np.array_equal(seg.joints[-1], qb)


def test_antipodal_midpoint_is_quarter_turn():
    a = Pose()
    b = Pose.from_rotvec([np.pi, 0, 0])
    for q1 in (b.rotation, -b.rotation):
        mid = slerp(a.rotation, q1, 0.5)
        R = Pose(mid).R
        # brute force: the midpoint is 90 degrees from both ends
        assert rotation_geodesic_angle(R, a.R) == pytest.approx(np.pi / 2, abs=1e-9)
        assert rotation_geodesic_angle(R, b.R) == pytest.approx(np.pi / 2, abs=1e-9)
    # the sign q1 was stored with does not matter
    np.testing.assert_allclose(slerp(a.rotation, b.rotation, 0.5), slerp(a.rotation, -b.rotation, 0.5), atol=1e-15)


def test_antipodal_segment_midpoint(rng):
    a = Pose.from_rotvec([0, 0, 0.3])
    b = a @ Pose.from_rotvec([0, np.pi, 0])
    seg = interpolate_trajectory((a, np.zeros(J)), (b, np.zeros(J)), 10, include_start=True, max_turn=np.pi)
    n = len(seg)
    angles = [rotation_geodesic_angle(a, w) for w in seg.wrists]
    assert angles[-1] == pytest.approx(np.pi, abs=1e-9)
    u = np.linspace(0, 1, n)
    np.testing.assert_allclose(angles, np.pi * u, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(poses(0.5), poses(0.5), st.integers(1, 40))
def test_angles_monotone_and_steps_bounded(a, b, n):
    seg = interpolate_trajectory((a, np.zeros(J)), (b, np.ones(J)), n, include_start=True)
    angles = [rotation_geodesic_angle(a, w) for w in seg.wrists]
    assert np.all(np.diff(angles) >= -1e-9)
    dists = [np.linalg.norm(w.translation - a.translation) for w in seg.wrists]
    assert np.all(np.diff(dists) >= -1e-12)
    dt, da = seg.max_step()
    assert dt < MAX_STEP and da < MAX_TURN
    assert len(seg) >= n


def test_duration_extended_for_long_move():
    a, b = Pose(), Pose(translation=[1.0, 0, 0])
    seg = interpolate_trajectory((a, np.zeros(J)), (b, np.zeros(J)), 3)
    assert len(seg) == 21            # floor(1.0 / 0.05) + 1
    assert seg.continuous(a)


def test_retimed_keeps_last_frame(rng):
    a, b = random_pose(rng, 0.1), random_pose(rng, 0.1)
    seg = interpolate_trajectory((a, np.zeros(J)), (b, np.ones(J)), 30, max_turn=np.pi)
    for n in (1, 5, 29):
        r = seg.retimed(n)
        assert len(r) == n
        assert r.wrists[-1] is seg.wrists[-1]
        assert np.array_equal(r.joints[-1], seg.joints[-1])


def test_segment_invariants():
    with pytest.raises(ValueError):
        TrajectorySegment(0, "transport", [], np.zeros((0, J)))
    with pytest.raises(ValueError):
        TrajectorySegment(0, "transport", [Pose()], np.zeros((2, J)))
    assert TrajectorySegment(0, "pregrasp-approach", [Pose()], np.zeros(J)).kind == KIND_APPROACH


def test_transport_keeps_hands_rigid(rng):
    start = Pose(translation=[0.6, 0, 0.05])
    goal = Pose.from_rotvec([0, 0, 0.8], [0.4, 0.3, 0.3])
    hands = {0: Frame(start @ Pose(translation=[0, 0.15, 0]), np.zeros(J), 1.0),
             1: Frame(start @ Pose(translation=[0, -0.15, 0]), np.zeros(J), 1.0)}
    segs = transport_segments(hands, start, goal, 5, np.zeros(J), {0: np.ones(J), 1: np.ones(J)}, obj=0)
    ref = hands[0].wrist.inverse() @ hands[1].wrist
    for k in range(len(segs[0])):
        assert close(segs[0].wrists[k].inverse() @ segs[1].wrists[k], ref, 1e-12)
    assert close(segs[0].last.wrist @ (hands[0].wrist.inverse() @ start), goal, 1e-12)
    assert segs[0].continuous(hands[0].wrist) and segs[1].continuous(hands[1].wrist)


# --- assembly --------------------------------------------------------------------------

def _inputs(initial):
    return AssemblyInputs(record_id="t", sides=["right"], object_ids=[], object_meshes=[],
                          initial_object_poses=[], target_poses=[], q_open=np.zeros(J),
                          joint_limits=np.tile([-1.0, 1.0], (J, 1)), initial_states=initial)


def _no_obs(record, rng, cfg):
    return np.zeros((0, 3), np.float32), np.zeros(record.horizon + 1, np.int64)


def test_queue_hole_raises_assembly_gap():
    q = ActionQueue(0, 10)
    q.write(3, interpolate_trajectory((Pose(), np.zeros(J)), (Pose(translation=[0.1, 0, 0]), np.zeros(J)), 4),
            0, 0)
    with pytest.raises(AssemblyGap) as err:
        assemble_demo(_inputs({}), [q], [], Pose(), observe=_no_obs)
    assert err.value.embodiment == 0 and err.value.frame == 0


def test_idle_frames_repeat_state():
    q = ActionQueue(0, 10)
    goal = Pose(translation=[0.1, 0, 0])
    q.write(3, interpolate_trajectory((Pose(), np.zeros(J)), (goal, np.zeros(J)), 4), 0, 0)
    rec = assemble_demo(_inputs({0: Frame(Pose(), np.zeros(J))}), [q], [], Pose(), observe=_no_obs)
    assert rec.horizon == 10
    assert np.array_equal(rec.wrist[0, 0], Pose().as_array())
    for t in range(7, 10):
        assert np.array_equal(rec.wrist[0, t], goal.as_array())
        assert rec.kind[0, t] == KIND_IDLE
    assert np.all(rec.kind[0, 3:7] == KIND_TRANSPORT)


def test_pick_place_final_pose_matches_reconstruction(pick_place):
    world, _, rec = pick_place
    last = world.frames[-1]
    for o, oid in enumerate(rec.object_ids):
        assert close(rec.object_pose(o, rec.horizon - 1), last.object_poses[oid], 1e-6)


def test_pick_place_rigid_grasp_and_continuity(pick_place):
    _, _, rec = pick_place
    assert grasped_intervals(rec)
    assert hand_object_drift(rec) < 1e-9
    dt, da = max_wrist_step(rec)
    assert dt < MAX_STEP and da < MAX_TURN
    lo, hi = rec.joint_limits[:, 0], rec.joint_limits[:, 1]
    assert np.all(rec.joints >= lo - 1e-12) and np.all(rec.joints <= hi + 1e-12)


def test_bimanual_wrists_move_together(bimanual_lift):
    _, _, rec = bimanual_lift
    frames = np.flatnonzero((rec.kind[0] == KIND_TRANSPORT) & (rec.kind[1] == KIND_TRANSPORT))
    assert len(frames) > 5
    ref = rec.wrist_pose(0, frames[0]).inverse() @ rec.wrist_pose(1, frames[0])
    for t in frames:
        assert close(rec.wrist_pose(0, t).inverse() @ rec.wrist_pose(1, t), ref, 1e-9)
    assert hand_object_drift(rec) < 1e-9
    # both hands start and stop the same subactions on the same frames
    assert np.array_equal(rec.kind[0], rec.kind[1])
