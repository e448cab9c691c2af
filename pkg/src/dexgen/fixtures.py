"""Synthetic reconstruction bundles for tests, examples and smoke runs.

Each fixture is laid out in a metric world frame, then expressed the way a
monocular reconstruction would deliver it: in the camera frame and divided
by an unknown scale. Hand clouds on the first frame are the camera-visible
vertices of the canonical hand mesh, so scale recovery has something to
work with.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import shapes
from .align import CAMERA_VIEW, visible_subset
from .geom import PointCloud, Pose
from .ingest import FrameRecord, ReconBundle, resample_frame_indices, write_bundle
from .ingest.tasks import TaskAnnotation, write_task_annotation
from .motion import interpolate_pose
from .schedule import Subaction, Task

SOURCE_FRAMES = 181
SOURCE_RATE = 30.0
TARGET_RATE = 10.0
HAND_MESH = shapes.box([0.18, 0.08, 0.02], divisions=12)
CAMERA_POSITION = np.array([1.3, 0.0, 0.6])
CAMERA_TARGET = np.array([0.6, 0.0, 0.05])
NAMES = ("pick-place", "bimanual-lift", "out-of-reach")


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose in world (x right, y down, z forward)."""
    z = np.asarray(target, float) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose.from_rt(np.c_[x, y, z], position)


def _palm_down() -> Pose:
    # palm normal (+z) pointing down at the table
    return Pose.from_rotvec([np.pi, 0.0, 0.0])


def _track(keys, n):
    """Piecewise geodesic pose track through (frame, Pose) keys, held at the ends."""
    out = []
    for t in range(n):
        if t <= keys[0][0]:
            out.append(keys[0][1])
            continue
        for (a, pa), (b, pb) in zip(keys, keys[1:]):
            if a <= t <= b:
                out.append(interpolate_pose(pa, pb, (t - a) / (b - a)) if b > a else pb)
                break
        else:
            out.append(keys[-1][1])
    return out


def _layout(name):
    """World-frame scene: objects, per-frame object and hand tracks, task list."""
    n = len(resample_frame_indices(SOURCE_FRAMES, SOURCE_RATE, TARGET_RATE))
    rest_l = Pose(_palm_down().rotation, [0.3, 0.3, 0.25])
    rest_r = Pose(_palm_down().rotation, [0.3, -0.3, 0.25])
    if name in ("pick-place", "out-of-reach"):
        cube = shapes.box([0.06, 0.06, 0.06], 2)
        side_obj = shapes.cylinder(0.035, 0.08, 24)
        if name == "pick-place":
            start = Pose(translation=[0.45, -0.1, 0.03])
            goal = Pose(translation=[0.45, 0.18, 0.03])
            other = Pose(translation=[0.85, 0.15, 0.04])
        else:
            # the second object pins the workspace origin so the cube ends up far away
            start = Pose(translation=[2.6, 0.0, 0.03])
            goal = Pose(translation=[2.6, 0.2, 0.03])
            other = Pose(translation=[-1.4, 0.0, 0.04])
        lift = Pose(translation=0.5 * (start.translation + goal.translation) + [0, 0, 0.12])
        objects = {"cube": cube, "can": side_obj}
        obj_track = {"cube": _track([(0, start), (32, start), (41, lift), (50, goal)], n),
                     "can": [other] * n}
        grip = Pose(_palm_down().rotation, [0, 0, 0.09])
        hand_r = _track([(0, rest_r), (20, start @ grip), (32, start @ grip), (41, lift @ grip), (50, goal @ grip),
                         (59, rest_r)], n)
        hands = {"left": [rest_l] * n, "right": hand_r}
        tasks = [Task((1,), "cube", (Subaction("pregrasp", 0), Subaction("grasp", 20), Subaction("motion", 32),
                                     Subaction("release", 50)), name="pick-place")]
    elif name == "bimanual-lift":
        box = shapes.box([0.24, 0.12, 0.10], 2)
        start = Pose(translation=[0.6, 0.0, 0.05])
        goal = Pose(translation=[0.6, 0.0, 0.20])
        objects = {"box": box}
        obj_track = {"box": _track([(0, start), (32, start), (50, goal)], n)}
        gl = Pose.from_rotvec([np.pi / 2, 0, 0], [0.0, 0.16, 0.0])
        gr = Pose.from_rotvec([-np.pi / 2, 0, 0], [0.0, -0.16, 0.0])
        hands = {"left": _track([(0, rest_l), (20, start @ gl), (32, start @ gl), (50, goal @ gl)], n),
                 "right": _track([(0, rest_r), (20, start @ gr), (32, start @ gr), (50, goal @ gr)], n)}
        tasks = [Task((0, 1), "box", (Subaction("pregrasp", 0), Subaction("grasp", 20), Subaction("motion", 32)),
                      name="lift")]
    else:
        raise ValueError(f"unknown fixture {name!r}; known: {NAMES}")
    return objects, obj_track, hands, TaskAnnotation(n, 2, tuple(tasks))


def make_fixture(name: str, scale: float = 0.37, rng=None):
    """(camera-frame ReconBundle, TaskAnnotation, world-frame truth dict) for a named scene.

    Reconstructed coordinates are metric ones times ``scale``, so alignment
    should recover ``1 / scale``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    objects, obj_track, hands, ann = _layout(name)
    idx = resample_frame_indices(SOURCE_FRAMES, SOURCE_RATE, TARGET_RATE)
    # shift the layout so the objects' first-frame box center sits at x = 0.6, y = 0
    pts = np.vstack([obj_track[k][0].apply(m.vertices) for k, m in objects.items()])
    c = 0.5 * (pts.min(0) + pts.max(0))
    shift = Pose(translation=[0.6 - c[0], -c[1], 0.0])
    cam = look_at(CAMERA_POSITION, CAMERA_TARGET)
    to_cam = cam.inverse()
    s = float(scale)

    def recon(p: Pose) -> Pose:
        q = to_cam @ shift @ p
        return Pose(q.rotation, q.translation * s)

    frames = []
    for t, i in enumerate(idx):
        fr = FrameRecord(index=i, timestamp=i / SOURCE_RATE)
        fr.object_poses = {k: recon(obj_track[k][t]) for k in objects}
        fr.hand_poses = {side: recon(hands[side][t]) for side in ("left", "right")}
        if t == 0:
            for side, p in fr.hand_poses.items():
                posed = HAND_MESH.transformed(Pose(p.rotation))
                vis = visible_subset(posed, CAMERA_VIEW)
                fr.hand_clouds[side] = PointCloud(posed.vertices[vis] * s + p.translation)
        frames.append(fr)

    xy = rng.uniform([0.2, -0.6], [1.1, 0.6], size=(600, 2))
    table_w = np.c_[xy, np.zeros(len(xy))]
    table = PointCloud(to_cam.apply(shift.apply(table_w)) * s)
    bundle = ReconBundle(
        bundle_id=name, source_frame_count=SOURCE_FRAMES, frame_rate_source=SOURCE_RATE,
        frame_rate_target=TARGET_RATE, frames=frames,
        objects={k: m.scaled(s) for k, m in objects.items()}, table_cloud=table,
        hand_meshes={"left": HAND_MESH, "right": HAND_MESH}, coordinate_frame="camera", metric=False,
        meta={"fixture": name})
    bundle.validate()
    truth = {"scale": 1.0 / s, "camera": shift @ cam, "shift": shift}
    return bundle, ann, truth


def write_fixture(name: str, root, seeds: int = None) -> Path:
    """Write bundle, task annotation and a config file under ``root``; returns the config path."""
    root = Path(root)
    bundle, ann, _ = make_fixture(name)
    write_bundle(bundle, root / "bundle")
    write_task_annotation(ann, root / "tasks.json")
    cfg = {"paths": {"bundle": "bundle", "tasks": "tasks.json"}}
    if seeds is not None:
        cfg["grasp"] = {"seeds": int(seeds)}
    path = root / "config.yaml"
    path.write_text(json.dumps(cfg, indent=1) + "\n", encoding="utf-8")   # JSON is valid YAML
    return path
