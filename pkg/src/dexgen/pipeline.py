"""Source-demo generation and dataset augmentation as library calls.

generate_source turns a world-frame bundle and its task annotation into one
DemoRecord: the scheduler asks an executor for each subaction's trajectory,
grasps are synthesized when a pregrasp subaction comes due, and the queues
are assembled into per-frame states. augment_dataset expands a source into
many records with independent per-demo seeds.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .augment import AugmentConfig, ObservationConfig, augment_record, demo_seed
from .errors import ContactUnreachable, InputError, WorkspaceViolation
from .geom import Pose
from .grasp import GraspConfig, Kinematics, plan_grasp
from .ingest import ReconBundle, TaskAnnotation
from .motion import (AssemblyInputs, Frame, approach_segment, assemble_demo, close_segment, relative_transform,
                     release_segment, transport_segments)
from .schedule import schedule

log = logging.getLogger(__name__)

SIDES = {1: ("right",), 2: ("left", "right")}


def _event(name, **kw) -> str:
    return " ".join([f"event={name}"] + [f"{k}={v}" for k, v in kw.items()])


class DemoExecutor:
    """Produces trajectory segments for the scheduler and remembers what it made.

    Tracks each embodiment's last commanded state and each object's current
    pose, so consecutive subactions chain without jumps.
    """

    def __init__(self, bundle: ReconBundle, kin: Kinematics, sides, grasp_config: GraspConfig,
                 finger_count: int = 3, seed: int = 0):
        self.bundle = bundle
        self.kin = kin
        self.sides = list(sides)
        self.config = grasp_config
        self.finger_count = finger_count
        self.seed = int(seed)
        self.object_ids = bundle.object_ids
        self.q_open = kin.hand.q_open.copy()
        f0 = bundle.frames[0]
        self.last = {e: Frame(f0.hand_poses[s], self.q_open.copy(), 0.0) for e, s in enumerate(self.sides)}
        self.initial = dict(self.last)
        self.object_pose = {o: f0.object_poses[oid] for o, oid in enumerate(self.object_ids)}
        self.grasps = []
        self.task_grasp = {}       # task index -> grasp index
        self.plans = {}

    def _keyframe(self, oid, frame) -> Pose:
        frame = min(max(int(frame), 0), len(self.bundle.frames) - 1)
        return self.bundle.frames[frame].object_poses[oid]

    def _start_of(self, task, kind, default):
        for s in task.subactions:
            if s.action_type == kind:
                return s.start_frame
        return default

    def _plan(self, i, task):
        oid = task.object_id
        o = self.object_ids.index(oid)
        sides = [self.sides[e] for e in task.embodiments]
        last = len(self.bundle.frames) - 1
        t_grasp = self._start_of(task, "grasp", task.start_frame)
        t_end = self._start_of(task, "release", last)
        ref = self._keyframe(oid, t_grasp)
        human = {self.sides[e]: ref.inverse() @ self.bundle.frames[min(t_grasp, last)].hand_poses[self.sides[e]]
                 for e in task.embodiments}
        planned = relative_transform(ref, self._keyframe(oid, t_end))
        start = self.object_pose[o]
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, i]))
        log.info(_event("grasp.plan", task=i, object=oid, hands="+".join(sides)))
        plan = plan_grasp(self.bundle.objects[oid], self.kin, sides, self.finger_count, human, start, planned,
                          rng, self.config)
        c = plan.candidate
        g = len(self.grasps)
        self.grasps.append({
            "task": i, "object_index": o, "object": oid, "embodiments": list(task.embodiments),
            "sides": sides, "object_pose": start.as_array().tolist(),
            "wrists": [(start @ c.hand(s).wrist).as_array().tolist() for s in sides],
            "q": [c.hand(s).q.tolist() for s in sides],
            "contacts": [list(map(int, cs)) for cs in c.contacts],
            "residual": float(c.residual), "objective": float(c.objective),
            "tried": plan.tried, "converged": plan.converged, "evaluations": plan.evaluations,
        })
        self.task_grasp[i] = g
        log.info(_event("grasp.done", task=i, residual=f"{c.residual:.2e}", tried=plan.tried,
                        converged=plan.converged))
        return g

    def _wrist(self, g, e) -> Pose:
        entry = self.grasps[g]
        return Pose.from_array(entry["wrists"][entry["embodiments"].index(e)])

    def _q(self, g, e) -> np.ndarray:
        entry = self.grasps[g]
        return np.asarray(entry["q"][entry["embodiments"].index(e)], dtype=float)

    def __call__(self, i, task, k, sub, t, max_len) -> dict:
        o = self.object_ids.index(task.object_id)
        kind = sub.action_type
        if kind == "pregrasp" or i not in self.task_grasp:
            g = self._plan(i, task)
        else:
            g = self.task_grasp[i]
        meta = dict(task=i, obj=o, grasp_index=g)
        segs = {}
        if kind == "pregrasp":
            for e in task.embodiments:
                segs[e] = approach_segment(e, self.last[e], self._wrist(g, e), self.q_open, **meta)
        elif kind == "grasp":
            for e in task.embodiments:
                segs[e] = close_segment(e, self.last[e], self._wrist(g, e), self.q_open, self._q(g, e),
                                        hold_attached=o, **meta)
        elif kind == "motion":
            nxt = task.subactions[k + 1].start_frame if k + 1 < len(task.subactions) else len(self.bundle.frames) - 1
            T_rel = relative_transform(self._keyframe(task.object_id, sub.start_frame),
                                       self._keyframe(task.object_id, nxt))
            goal = self.object_pose[o] @ T_rel
            current = {e: self.last[e] for e in task.embodiments}
            q_grasp = {e: self._q(g, e) for e in task.embodiments}
            segs = transport_segments(current, self.object_pose[o], goal, max_len, self.q_open, q_grasp, o,
                                      task=i, grasp_index=g)
            self.object_pose[o] = goal
        elif kind == "release":
            for e in task.embodiments:
                segs[e] = release_segment(e, self.last[e], self.q_open, self._q(g, e), **meta)
        else:
            raise InputError(f"unknown subaction {kind!r}")
        for e, seg in segs.items():
            self.last[e] = seg.last
        return segs


def generate_source(bundle: ReconBundle, annotation: TaskAnnotation, kin: Kinematics,
                    grasp_config: GraspConfig = GraspConfig(), finger_count: int = 3, seed: int = 0,
                    camera: Pose = None, obs_config: ObservationConfig = None, record_id: str = None):
    """One demonstration from a world-frame bundle. Returns (record, schedule result)."""
    if bundle.coordinate_frame != "world":
        raise InputError("bundle must be aligned to the world frame first")
    annotation.check_objects(bundle.object_ids)
    N = annotation.n_embodiments
    if N not in SIDES:
        raise InputError(f"need 1 or 2 embodiments, got {N}")
    sides = SIDES[N]
    for s in sides:
        if s not in bundle.frames[0].hand_poses:
            raise InputError(f"first frame has no {s} hand pose for the initial state")
    execu = DemoExecutor(bundle, kin, sides, grasp_config, finger_count, seed)
    result = schedule(N, annotation.horizon, list(annotation.tasks), execu)
    last = bundle.frames[-1]
    if camera is None:
        wf = bundle.meta.get("world_frame")
        camera = Pose.from_array(wf["transform"]) if wf else Pose()
    inputs = AssemblyInputs(
        record_id=record_id or f"{bundle.bundle_id}-source",
        sides=list(sides),
        object_ids=list(bundle.object_ids),
        object_meshes=[bundle.objects[k] for k in bundle.object_ids],
        initial_object_poses=[bundle.frames[0].object_poses[k] for k in bundle.object_ids],
        target_poses=[last.object_poses[k] for k in bundle.object_ids],
        q_open=execu.q_open,
        joint_limits=np.c_[kin.lower, kin.upper],
        initial_states=execu.initial,
        provenance={"bundle": bundle.bundle_id, "seed": int(seed), "scale": 1.0},
    )
    record = assemble_demo(inputs, result.queues, execu.grasps, camera, obs_config=obs_config)
    log.info(_event("generate.done", record=record.record_id, frames=record.horizon, grasps=len(execu.grasps)))
    return record, result


# --------------------------------------------------------------------------
# augmentation


def augment_one(source, index: int, master_seed: int, config: AugmentConfig, kin: Kinematics,
                obs_config: ObservationConfig = None, attempts: int = 10):
    """Augmented demo ``index``; a draw that cannot be realized is redrawn from a derived seed."""
    rid = f"{source.record_id}-{index:04d}"
    last = None
    for a in range(attempts):
        seed = demo_seed(master_seed, index) if a == 0 else demo_seed(master_seed, index * 1000003 + a)
        try:
            rec = augment_record(source, seed, config, kin, obs_config, record_id=rid)
            rec.provenance["index"] = int(index)
            return rec
        except (ContactUnreachable, WorkspaceViolation) as exc:
            log.info(_event("augment.redraw", record=rid, attempt=a, reason=type(exc).__name__))
            last = exc
    raise last


def _augment_job(args):
    return augment_one(*args)


def augment_dataset(source, count: int, master_seed: int, config: AugmentConfig, kin: Kinematics,
                    obs_config: ObservationConfig = None, jobs: int = 1) -> list:
    """``count`` augmented demos; the output does not depend on ``jobs``."""
    args = [(source, i, master_seed, config, kin, obs_config) for i in range(count)]
    if jobs <= 1 or count == 1:
        return [augment_one(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_augment_job, args, chunksize=max(1, count // (4 * jobs))))
