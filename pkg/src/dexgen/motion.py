"""Keyframe-driven hand motion and assembly of scheduled segments into records.

Object motion between two keyframes is a relative transform; a hand that
holds the object follows it as one rigid body. Dense frames between
keyframes come from geodesic interpolation (linear translation, slerp
rotation, linear joints), with the segment stretched whenever a single
frame would move the wrist further than the continuity bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssemblyGap
from .geom import Pose, rotation_geodesic_angle
from .record import (KIND_APPROACH, KIND_CLOSE, KIND_IDLE, KIND_NAMES, KIND_RELEASE, KIND_TRANSPORT,
                     DemoRecord)

MAX_STEP = 0.05                      # m per frame
MAX_TURN = math.radians(20.0)        # rad per frame
STANDOFF = 0.08
APPROACH_FRAMES = 20
CLOSE_FRAMES = 10
RELEASE_FRAMES = 5

KIND_CODES = {v: k for k, v in KIND_NAMES.items()}


# --------------------------------------------------------------------------
# object-centric transforms


def relative_transform(p_t: Pose, p_t2: Pose) -> Pose:
    """Object-frame transform taking ``p_t`` to ``p_t2`` (``p_t @ result == p_t2``)."""
    return p_t.inverse() @ p_t2


def ee_target(T: Pose, ee_pose: Pose, object_pose: Pose = None) -> Pose:
    """End-effector pose after the rigidly held object undergoes ``T``.

    With ``object_pose`` given, ``T`` is the object-frame relative transform
    (as returned by relative_transform) and is conjugated into the world
    frame first: ``ee' = (p_o T p_o^-1) ee``. Without it, ``T`` is taken to
    be a world-frame motion already.
    """
    D = T if object_pose is None else object_pose @ T @ object_pose.inverse()
    return D @ ee_pose


def held_object_pose(ee_pose: Pose, grasp_offset: Pose) -> Pose:
    """Object pose implied by a wrist pose and the wrist-to-object offset."""
    return ee_pose @ grasp_offset


# --------------------------------------------------------------------------
# interpolation


def _lex_larger(a, b) -> bool:
    for x, y in zip(a, b):
        if x != y:
            return x > y
    return False


def slerp(q0, q1, u: float) -> np.ndarray:
    """Shortest-arc quaternion interpolation.

    When both arcs are equally short (rotations 180 degrees apart) the arc
    toward the lexicographically larger of ``q1`` and ``-q1`` is taken, so
    the result never depends on the sign ``q1`` happened to be stored with.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d = float(q0 @ q1)
    if abs(d) < 1e-12:
        if not _lex_larger(q1, -q1):
            q1 = -q1
        d = 0.0
    elif d < 0.0:
        q1, d = -q1, -d
    d = min(d, 1.0)
    theta = math.acos(d)
    if theta < 1e-9:
        q = (1.0 - u) * q0 + u * q1
    else:
        s = math.sin(theta)
        q = math.sin((1.0 - u) * theta) / s * q0 + math.sin(u * theta) / s * q1
    return q / np.linalg.norm(q)


def interpolate_pose(a: Pose, b: Pose, u: float) -> Pose:
    """Geodesic blend; ``u = 0``, ``u = 1`` and ``a == b`` return the inputs themselves."""
    if u == 0.0 or a is b or (np.array_equal(a.rotation, b.rotation)
                               and np.array_equal(a.translation, b.translation)):
        return a
    if u == 1.0:
        return b
    t = (1.0 - u) * a.translation + u * b.translation
    return Pose(slerp(a.rotation, b.rotation, u), t)


def pose_step(a: Pose, b: Pose) -> tuple:
    """(translation distance, rotation angle) between two wrist poses."""
    return float(np.linalg.norm(b.translation - a.translation)), rotation_geodesic_angle(a, b)


def frames_needed(a: Pose, b: Pose, max_step=MAX_STEP, max_turn=MAX_TURN) -> int:
    """Smallest frame count whose uniform steps stay strictly inside the bound."""
    dt, da = pose_step(a, b)
    return max(1, int(math.floor(dt / max_step)) + 1, int(math.floor(da / max_turn)) + 1)


# --------------------------------------------------------------------------
# segments


@dataclass
class Frame:
    wrist: Pose
    joints: np.ndarray
    grip: float = 0.0


@dataclass(eq=False)
class TrajectorySegment:
    """Consecutive wrist/joint states for one embodiment.

    ``grip`` blends each frame's joints between the open pose and the grasp
    pose of ``grasp_index`` (see blend_joints), which lets scale
    augmentation re-close the fingers without touching the wrist path.
    ``attached`` is the object held during the segment and ``hold_attached``
    the object still held while the embodiment idles after it.
    """

    embodiment: int
    kind: int
    wrists: list
    joints: np.ndarray
    grip: np.ndarray = None
    task: int = -1
    obj: int = -1
    grasp_index: int = -1
    attached: int = -1
    hold_attached: int = -1

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = KIND_CODES[self.kind]
        self.wrists = list(self.wrists)
        if not self.wrists:
            raise ValueError("segment needs at least one frame")
        self.joints = np.atleast_2d(np.asarray(self.joints, dtype=float))
        if len(self.joints) != len(self.wrists):
            raise ValueError("joint and wrist frame counts differ")
        if self.grip is None:
            self.grip = np.zeros(len(self.wrists))
        self.grip = np.asarray(self.grip, dtype=float).reshape(-1)
        if len(self.grip) != len(self.wrists):
            raise ValueError("grip and wrist frame counts differ")

    def __len__(self):
        return len(self.wrists)

    def __getitem__(self, k) -> Frame:
        return Frame(self.wrists[k], self.joints[k], float(self.grip[k]))

    @property
    def kind_name(self) -> str:
        return KIND_NAMES[self.kind]

    @property
    def last(self) -> Frame:
        return self[len(self) - 1]

    def _like(self, wrists, joints, grip) -> "TrajectorySegment":
        return TrajectorySegment(self.embodiment, self.kind, wrists, joints, grip, self.task, self.obj,
                                 self.grasp_index, self.attached, self.hold_attached)

    def retimed(self, n: int) -> "TrajectorySegment":
        """Resample to ``n`` frames along the same path; the last frame is kept exactly.

        Frame ``i`` sits at path parameter ``(i + 1) / n`` of the original
        segment (the frame before the segment being parameter 0), so
        shortening only drops intermediate detail.
        """
        L = len(self)
        if n < 1:
            raise ValueError("need at least one frame")
        if n == L:
            return self
        wrists, joints, grip = [], [], []
        for i in range(n):
            s = (i + 1) * L / n - 1.0          # fractional index into the original frames
            if i == n - 1:
                k, f = L - 1, 0.0
            elif s <= 0.0:
                k, f = 0, 0.0
            else:
                k = int(math.floor(s))
                f = s - k
            if f == 0.0 or k + 1 >= L:
                wrists.append(self.wrists[k])
                joints.append(self.joints[k])
                grip.append(self.grip[k])
            else:
                wrists.append(interpolate_pose(self.wrists[k], self.wrists[k + 1], f))
                joints.append((1 - f) * self.joints[k] + f * self.joints[k + 1])
                grip.append((1 - f) * self.grip[k] + f * self.grip[k + 1])
        return self._like(wrists, np.array(joints), np.array(grip))

    def max_step(self, previous: Pose = None) -> tuple:
        """Largest (translation, angle) between consecutive wrists (and from ``previous``)."""
        poses = ([previous] if previous is not None else []) + self.wrists
        steps = [pose_step(a, b) for a, b in zip(poses, poses[1:])]
        if not steps:
            return 0.0, 0.0
        return max(s[0] for s in steps), max(s[1] for s in steps)

    def continuous(self, previous: Pose = None) -> bool:
        dt, da = self.max_step(previous)
        return dt < MAX_STEP and da < MAX_TURN


def blend_joints(q_open, q_grasp, grip) -> np.ndarray:
    """Joint vectors ``q_open + w (q_grasp - q_open)`` for closure weights ``w``."""
    q_open = np.asarray(q_open, dtype=float)
    w = np.asarray(grip, dtype=float)
    if q_grasp is None:
        return np.broadcast_to(q_open, w.shape + q_open.shape).copy()
    return q_open + w[..., None] * (np.asarray(q_grasp, dtype=float) - q_open)


def interpolate_trajectory(start, goal, duration: int, embodiment: int = 0, kind=KIND_TRANSPORT,
                           include_start: bool = False, max_step=MAX_STEP, max_turn=MAX_TURN,
                           **meta) -> TrajectorySegment:
    """Geodesic path from ``start`` to ``goal``, each a (Pose, joints) pair.

    By default the frames are at ``u = k / n`` for ``k = 1..n`` (the start
    state is the frame before the segment); with ``include_start`` they span
    ``u = 0..1`` inclusive. ``n`` is ``duration`` or, if that would break the
    continuity bound, the smallest count that does not. The goal (and the
    start, when included) are reproduced bit for bit.
    """
    if duration < 1:
        raise ValueError("duration must be >= 1")
    p0, q0 = start
    p1, q1 = goal
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    need = frames_needed(p0, p1, max_step, max_turn)
    n = max(duration, need + (1 if include_start else 0))
    if include_start:
        us = [k / (n - 1) for k in range(n)]
    else:
        us = [k / n for k in range(1, n + 1)]
    us[-1] = 1.0
    wrists = [interpolate_pose(p0, p1, u) for u in us]
    joints = np.array([q0 if u == 0.0 else q1 if u == 1.0 else q0 + u * (q1 - q0) for u in us])
    return TrajectorySegment(embodiment, kind, wrists, joints, **meta)


# --------------------------------------------------------------------------
# segment builders used by the generation executor


def approach_axis(wrist: Pose) -> np.ndarray:
    """Palm normal (local +z) in world coordinates."""
    return wrist.R[:, 2]


def pregrasp_pose(grasp_wrist: Pose, standoff: float = STANDOFF) -> Pose:
    """Grasp wrist pose backed off along the approach axis."""
    return Pose(grasp_wrist.rotation, grasp_wrist.translation - standoff * approach_axis(grasp_wrist))


def approach_segment(embodiment, current: Frame, grasp_wrist: Pose, q_open, frames=APPROACH_FRAMES,
                     standoff=STANDOFF, **meta) -> TrajectorySegment:
    """Transit from the current state to the pregrasp pose with an open hand."""
    goal = pregrasp_pose(grasp_wrist, standoff)
    seg = interpolate_trajectory((current.wrist, current.joints), (goal, q_open), frames, embodiment,
                                 KIND_APPROACH, **meta)
    seg.grip = np.zeros(len(seg))
    return seg


def close_segment(embodiment, current: Frame, grasp_wrist: Pose, q_open, q_grasp, frames=CLOSE_FRAMES,
                  **meta) -> TrajectorySegment:
    """Move in from the standoff while closing the fingers onto ``q_grasp``."""
    n = max(frames, frames_needed(current.wrist, grasp_wrist))
    us = [k / n for k in range(1, n + 1)]
    us[-1] = 1.0
    w0 = current.grip
    grip = np.array([w0 + u * (1.0 - w0) for u in us])
    grip[-1] = 1.0
    wrists = [interpolate_pose(current.wrist, grasp_wrist, u) for u in us]
    return TrajectorySegment(embodiment, KIND_CLOSE, wrists, blend_joints(q_open, q_grasp, grip), grip, **meta)


def transport_segments(current: dict, object_start: Pose, object_goal: Pose, duration: int, q_open,
                       q_grasp: dict, obj: int, **meta) -> dict:
    """Carry a held object from ``object_start`` to ``object_goal``.

    ``current`` maps embodiment -> Frame at the start. The object path is
    interpolated and every holding hand is moved through it rigidly, so the
    hand-object (and hand-hand) relative poses stay fixed. The frame count
    grows until every hand respects the continuity bound.
    """
    offsets = {e: f.wrist.inverse() @ object_start for e, f in current.items()}
    n = max(duration, 1)
    for _ in range(64):
        us = [k / n for k in range(1, n + 1)]
        us[-1] = 1.0
        path = [interpolate_pose(object_start, object_goal, u) for u in us]
        out = {}
        ok = True
        for e, f in current.items():
            inv = offsets[e].inverse()
            wrists = [p @ inv for p in path]
            grip = np.full(n, f.grip)
            seg = TrajectorySegment(e, KIND_TRANSPORT, wrists, blend_joints(q_open, q_grasp.get(e), grip), grip,
                                    obj=obj, attached=obj, hold_attached=obj, **meta)
            ok &= seg.continuous(f.wrist)
            out[e] = seg
        if ok:
            return out
        n = int(math.ceil(n * 1.25)) + 1
    return out


def release_segment(embodiment, current: Frame, q_open, q_grasp, frames=RELEASE_FRAMES, **meta) -> TrajectorySegment:
    """Open the hand in place."""
    us = [k / frames for k in range(1, frames + 1)]
    grip = np.array([current.grip * (1.0 - u) for u in us])
    grip[-1] = 0.0
    return TrajectorySegment(embodiment, KIND_RELEASE, [current.wrist] * frames,
                             blend_joints(q_open, q_grasp, grip), grip, **meta)


# --------------------------------------------------------------------------
# assembly


@dataclass
class AssemblyInputs:
    """Everything assemble_demo needs besides the queues."""

    record_id: str
    sides: list
    object_ids: list
    object_meshes: list
    initial_object_poses: list          # Pose per object at frame 0
    target_poses: list                  # reconstructed final Pose per object
    q_open: np.ndarray
    joint_limits: np.ndarray
    initial_states: dict = field(default_factory=dict)   # embodiment -> Frame
    object_scale: np.ndarray = None
    provenance: dict = field(default_factory=dict)


def assemble_demo(inputs: AssemblyInputs, queues, grasps: list, camera: Pose, observe=None,
                  obs_config=None) -> DemoRecord:
    """Concatenate queue segments into per-timestep states and replay objects.

    Frames with no queue entry repeat the embodiment's previous state (the
    hand idles); frames before an embodiment's first state with no initial
    state given raise AssemblyGap. An object is static unless a hand holds
    it, in which case it follows that hand rigidly from the pose it had
    when the hold began. Observation clouds come from ``observe`` (by
    default augment.observe_record with extraction only).
    """
    N = len(queues)
    T = queues[0].horizon if N else 0
    J = len(inputs.q_open)
    O = len(inputs.object_ids)
    wrist = np.zeros((N, T, 7))
    joints = np.zeros((N, T, J))
    grip = np.zeros((N, T))
    grasp_index = np.full((N, T), -1, dtype=np.int32)
    kind = np.full((N, T), KIND_IDLE, dtype=np.int8)
    assoc = np.full((N, T), -1, dtype=np.int32)
    attached = np.full((N, T), -1, dtype=np.int32)

    for e, q in enumerate(queues):
        prev = inputs.initial_states.get(e)
        state = None if prev is None else (prev.wrist.as_array(), np.asarray(prev.joints, float), prev.grip,
                                           -1, -1, -1)
        for t in range(T):
            sid = q.slots[t]
            if sid >= 0:
                _, _, start, seg = q.segments[sid]
                fr = seg[t - start]
                wrist[e, t] = fr.wrist.as_array()
                joints[e, t] = fr.joints
                grip[e, t] = fr.grip
                grasp_index[e, t] = seg.grasp_index
                kind[e, t] = seg.kind
                assoc[e, t] = seg.obj
                attached[e, t] = seg.attached
                state = (wrist[e, t].copy(), joints[e, t].copy(), fr.grip, seg.grasp_index, seg.obj,
                         seg.hold_attached)
            elif state is None:
                raise AssemblyGap(e, t)
            else:
                wrist[e, t], joints[e, t], grip[e, t], grasp_index[e, t], assoc[e, t], attached[e, t] = state

    object_poses = np.zeros((O, T, 7))
    for o in range(O):
        cur = inputs.initial_object_poses[o]
        offset, holder = None, -1
        for t in range(T):
            holders = [e for e in range(N) if attached[e, t] == o]
            if holders:
                e = holders[0]
                w = Pose.from_array(wrist[e, t])
                if offset is None or holder != e:
                    # the hold starts now: fix the offset from the previous frame's poses
                    ref = Pose.from_array(wrist[e, t - 1]) if t > 0 else w
                    offset = ref.inverse() @ cur
                    holder = e
                cur = w @ offset
            else:
                offset, holder = None, -1
            object_poses[o, t] = cur.as_array()

    record = DemoRecord(
        record_id=inputs.record_id, sides=list(inputs.sides), wrist=wrist, joints=joints, grip=grip,
        grasp_index=grasp_index, kind=kind, assoc=assoc, attached=attached,
        object_ids=list(inputs.object_ids), object_poses=object_poses,
        target_poses=np.array([p.as_array() for p in inputs.target_poses]).reshape(O, 7),
        object_meshes=list(inputs.object_meshes),
        object_scale=np.ones(O) if inputs.object_scale is None else np.asarray(inputs.object_scale, float),
        camera=camera.as_array(), obs_points=np.zeros((0, 3), np.float32),
        obs_offsets=np.zeros(T + 1, np.int64), q_open=np.asarray(inputs.q_open, float),
        joint_limits=np.asarray(inputs.joint_limits, float), grasps=list(grasps),
        provenance=dict(inputs.provenance))
    if observe is None:
        from .augment import observe_record
        observe = observe_record
    pts, offs = observe(record, None, obs_config)
    record.obs_points, record.obs_offsets = pts, offs
    record.check()
    return record


def grasped_intervals(record: DemoRecord) -> list:
    """(embodiment, object, first frame, last frame) runs where a hand holds an object."""
    out = []
    for e in range(record.n_embodiments):
        a = record.attached[e]
        t = 0
        while t < len(a):
            if a[t] >= 0:
                s = t
                while t + 1 < len(a) and a[t + 1] == a[s]:
                    t += 1
                out.append((e, int(a[s]), s, t))
            t += 1
    return out


def hand_object_drift(record: DemoRecord) -> float:
    """Largest change of the hand-to-object relative pose within any grasped interval."""
    worst = 0.0
    for e, o, s, t in grasped_intervals(record):
        ref = record.wrist_pose(e, s).inverse() @ record.object_pose(o, s)
        for k in range(s + 1, t + 1):
            rel = record.wrist_pose(e, k).inverse() @ record.object_pose(o, k)
            worst = max(worst, float(np.linalg.norm(rel.translation - ref.translation)),
                        rotation_geodesic_angle(rel, ref))
    return worst


def max_wrist_step(record: DemoRecord) -> tuple:
    """Largest per-frame wrist translation and rotation across the record."""
    dt = da = 0.0
    for e in range(record.n_embodiments):
        for t in range(1, record.horizon):
            a, b = pose_step(record.wrist_pose(e, t - 1), record.wrist_pose(e, t))
            dt, da = max(dt, a), max(da, b)
    return dt, da


__all__ = [
    "APPROACH_FRAMES", "AssemblyInputs", "CLOSE_FRAMES", "Frame", "MAX_STEP", "MAX_TURN", "RELEASE_FRAMES",
    "STANDOFF", "TrajectorySegment", "approach_axis", "approach_segment", "assemble_demo", "blend_joints",
    "close_segment", "ee_target", "frames_needed", "grasped_intervals", "hand_object_drift", "held_object_pose",
    "interpolate_pose", "interpolate_trajectory", "max_wrist_step", "pose_step", "pregrasp_pose",
    "relative_transform", "release_segment", "slerp", "transport_segments",
]
