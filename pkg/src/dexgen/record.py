"""The demonstration record: everything one generated episode contains."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .geom import Pose

# per-frame segment kinds
KIND_IDLE = 0
KIND_APPROACH = 1
KIND_CLOSE = 2
KIND_TRANSPORT = 3
KIND_RELEASE = 4
KIND_NAMES = {KIND_IDLE: "idle", KIND_APPROACH: "pregrasp-approach", KIND_CLOSE: "grasp-close",
              KIND_TRANSPORT: "transport", KIND_RELEASE: "release"}

ARRAY_FIELDS = ("wrist", "joints", "grip", "grasp_index", "kind", "assoc", "attached",
                "object_poses", "target_poses", "object_scale", "camera",
                "obs_points", "obs_offsets", "q_open", "joint_limits")


@dataclass(eq=False)
class DemoRecord:
    record_id: str
    sides: list                 # embodiment names, e.g. ["left", "right"]
    wrist: np.ndarray           # (N, T, 7) world-frame wrist poses
    joints: np.ndarray          # (N, T, J)
    grip: np.ndarray            # (N, T) closure weight, 0 open .. 1 grasp pose
    grasp_index: np.ndarray     # (N, T) int32 index into ``grasps`` or -1
    kind: np.ndarray            # (N, T) int8 segment kind
    assoc: np.ndarray           # (N, T) int32 object the motion is about, or -1
    attached: np.ndarray        # (N, T) int32 object rigidly held, or -1
    object_ids: list
    object_poses: np.ndarray    # (O, T, 7)
    target_poses: np.ndarray    # (O, 7) reconstructed final poses
    object_meshes: list         # TriMesh per object, object frame, already scaled
    object_scale: np.ndarray    # (O,)
    camera: np.ndarray          # (7,) camera pose in world
    obs_points: np.ndarray      # (M, 3) float32, camera frame, all frames concatenated
    obs_offsets: np.ndarray     # (T + 1,) int64 slice bounds into obs_points
    q_open: np.ndarray          # (J,)
    joint_limits: np.ndarray    # (J, 2)
    grasps: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def n_embodiments(self) -> int:
        return self.wrist.shape[0]

    @property
    def horizon(self) -> int:
        return self.wrist.shape[1]

    def wrist_pose(self, e, t) -> Pose:
        return Pose.from_array(self.wrist[e, t])

    def object_pose(self, o, t) -> Pose:
        return Pose.from_array(self.object_poses[o, t])

    def camera_pose(self) -> Pose:
        return Pose.from_array(self.camera)

    def observation(self, t) -> np.ndarray:
        return self.obs_points[self.obs_offsets[t]:self.obs_offsets[t + 1]]

    def check(self) -> None:
        """Shape consistency across all per-timestep fields."""
        N, T = self.wrist.shape[:2]
        for name in ("joints", "grip", "grasp_index", "kind", "assoc", "attached"):
            a = getattr(self, name)
            if a.shape[:2] != (N, T):
                raise ValueError(f"{name} has shape {a.shape}, expected ({N}, {T}, ...)")
        if self.object_poses.shape[1] != T:
            raise ValueError("object_poses timestep count differs from wrist")
        O = len(self.object_ids)
        if self.object_poses.shape[0] != O or len(self.object_meshes) != O or len(self.object_scale) != O:
            raise ValueError("object field lengths differ")
        if len(self.obs_offsets) != T + 1 or self.obs_offsets[-1] != len(self.obs_points):
            raise ValueError("observation offsets do not match timestep count")
        if len(self.sides) != N:
            raise ValueError("sides length differs from embodiment count")

    def copy(self, **changes) -> "DemoRecord":
        """Deep copy (arrays copied) with optional field replacements."""
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = v.copy()
            elif isinstance(v, list):
                v = list(v)
            elif isinstance(v, dict):
                v = dict(v)
            kw[f.name] = v
        kw.update(changes)
        return DemoRecord(**kw)


def records_equal(a: DemoRecord, b: DemoRecord, atol=0.0, ignore=()) -> bool:
    for f in fields(DemoRecord):
        if f.name in ignore:
            continue
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray):
            if x.shape != y.shape or x.dtype.kind != y.dtype.kind:
                return False
            if x.dtype.kind == "f":
                if not np.allclose(x, y, atol=atol, rtol=0.0):
                    return False
            elif not np.array_equal(x, y):
                return False
        elif f.name == "object_meshes":
            if len(x) != len(y):
                return False
            for m, n in zip(x, y):
                if m.faces.shape != n.faces.shape or not np.array_equal(m.faces, n.faces):
                    return False
                if not np.allclose(m.vertices, n.vertices, atol=atol, rtol=0.0):
                    return False
        elif x != y:
            return False
    return True
