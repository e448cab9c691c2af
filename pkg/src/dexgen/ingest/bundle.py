"""Reconstruction bundles: the per-frame perception output this package ingests.

A bundle is a directory holding ``manifest.json`` plus DXF1 geometry files.
Poses in the manifest are 7-vectors ``[qw, qx, qy, qz, tx, ty, tz]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import FormatError, InvalidRate, InvariantViolation, MissingAsset
from ..geom import PointCloud, Pose
from .formats import read_cloud, read_mesh, write_cloud, write_mesh

MANIFEST = "manifest.json"
FORMAT_NAME = "dexgen-bundle"
HANDS = ("left", "right")
QUAT_TOL = 1e-6


def _rate(x) -> Fraction:
    return Fraction(x).limit_denominator(10**6)


def resample_frame_indices(K: int, f: float, f_t: float) -> list[int]:
    """Source frame indices kept when resampling ``K`` frames from ``f`` to ``f_t`` Hz.

    ``K_t = floor(K f_t / f) - 1`` and index ``i`` maps to ``floor(i f / f_t)``
    for ``i = 0..K_t``. Indices that would land at or past ``K`` are dropped.
    """
    if K < 1:
        raise InvalidRate(f"need at least one frame, got K={K}")
    if not (f_t > 0):
        raise InvalidRate(f"target rate must be positive, got {f_t}")
    if f_t > f:
        raise InvalidRate(f"target rate {f_t} exceeds source rate {f}")
    fs, ft = _rate(f), _rate(f_t)
    k_t = math.floor(K * ft / fs) - 1
    idx = [math.floor(i * fs / ft) for i in range(k_t + 1)]
    return [i for i in idx if i < K]


@dataclass(eq=False)
class FrameRecord:
    index: int
    timestamp: float
    scene_cloud: Optional[PointCloud] = None
    object_poses: dict = field(default_factory=dict)   # id -> Pose
    hand_poses: dict = field(default_factory=dict)     # "left"/"right" -> Pose
    hand_clouds: dict = field(default_factory=dict)    # side -> PointCloud (segmented)
    object_clouds: dict = field(default_factory=dict)  # id -> PointCloud (segmented)


@dataclass(eq=False)
class ReconBundle:
    bundle_id: str
    source_frame_count: int
    frame_rate_source: float
    frame_rate_target: float
    frames: list
    objects: dict                 # id -> TriMesh in the object frame
    table_cloud: PointCloud
    hand_meshes: dict = field(default_factory=dict)  # side -> canonical TriMesh, hand frame
    coordinate_frame: str = "camera"
    metric: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def object_ids(self) -> list:
        return list(self.objects)

    def object_pose(self, obj_id, t) -> Pose:
        return self.frames[t].object_poses[obj_id]

    def hand_pose(self, side, t) -> Pose:
        return self.frames[t].hand_poses[side]

    def validate(self) -> None:
        expect = resample_frame_indices(self.source_frame_count, self.frame_rate_source,
                                        self.frame_rate_target)
        got = [fr.index for fr in self.frames]
        if got != expect:
            missing = sorted(set(expect) - set(got))
            raise InvariantViolation(
                f"frame indices do not match resampling {self.frame_rate_source}->"
                f"{self.frame_rate_target} Hz of {self.source_frame_count} frames"
                + (f"; missing {missing[:10]}" if missing else ""))
        stamps = [fr.timestamp for fr in self.frames]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise InvariantViolation("frame timestamps are not strictly increasing")
        pose_keys = None
        for fr in self.frames:
            keys = frozenset(fr.object_poses)
            if not keys <= set(self.objects):
                raise InvariantViolation(f"frame {fr.index}: unknown objects {sorted(keys - set(self.objects))}")
            if pose_keys is None:
                pose_keys = keys
            elif keys != pose_keys:
                raise InvariantViolation(f"frame {fr.index}: object set differs from frame {self.frames[0].index}")
        if self.table_cloud is None or len(self.table_cloud) == 0:
            raise InvariantViolation("table cloud is empty")


# --------------------------------------------------------------------------
# manifest parsing


def _require(d, key, where, kind=None):
    if not isinstance(d, dict) or key not in d:
        raise FormatError("missing required field", f"{where}.{key}")
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise FormatError(f"expected {kind.__name__ if isinstance(kind, type) else kind}", f"{where}.{key}")
    return v


def _pose(value, where, frame_index=None) -> Pose:
    if not isinstance(value, list) or len(value) != 7:
        raise FormatError("pose must be a 7-element list", where)
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise FormatError("pose must be numeric", where) from None
    if not np.all(np.isfinite(a)):
        raise FormatError("pose must be finite", where)
    norm = np.linalg.norm(a[:4])
    if abs(norm - 1.0) > QUAT_TOL:
        label = f"frame {frame_index}" if frame_index is not None else where
        raise InvariantViolation(f"{label}: quaternion norm {norm:.6g} is not 1 ({where})")
    return Pose.from_array(a)


def _asset(root: Path, rel, where):
    if not isinstance(rel, str):
        raise FormatError("expected a relative file path", where)
    p = root / rel
    if not p.is_file():
        raise MissingAsset(f"{where}: file not found: {p}")
    return p


def load_bundle(path) -> ReconBundle:
    root = Path(path)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise MissingAsset(f"manifest not found: {mpath}")
    try:
        m = json.loads(mpath.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}", "manifest") from None
    if not isinstance(m, dict):
        raise FormatError("manifest must be an object", "manifest")
    if m.get("format") != FORMAT_NAME:
        raise FormatError(f"expected format {FORMAT_NAME!r}", "manifest.format")

    K = _require(m, "source_frame_count", "manifest", int)
    f = _require(m, "frame_rate_source", "manifest", (int, float))
    ft = _require(m, "frame_rate_target", "manifest", (int, float))

    objects = {}
    for i, o in enumerate(_require(m, "objects", "manifest", list)):
        where = f"manifest.objects[{i}]"
        oid = _require(o, "id", where, str)
        objects[oid] = read_mesh(_asset(root, _require(o, "mesh", where), f"{where}.mesh"))

    table = read_cloud(_asset(root, _require(m, "table_cloud", "manifest"), "manifest.table_cloud"))

    hand_meshes = {}
    for side, rel in (m.get("hand_meshes") or {}).items():
        if side not in HANDS:
            raise FormatError("hand side must be left/right", f"manifest.hand_meshes.{side}")
        hand_meshes[side] = read_mesh(_asset(root, rel, f"manifest.hand_meshes.{side}"))

    frames = []
    for i, fr in enumerate(_require(m, "frames", "manifest", list)):
        where = f"manifest.frames[{i}]"
        idx = _require(fr, "index", where, int)
        ts = float(_require(fr, "timestamp", where, (int, float)))
        rec = FrameRecord(index=idx, timestamp=ts)
        if fr.get("scene_cloud"):
            rec.scene_cloud = read_cloud(_asset(root, fr["scene_cloud"], f"{where}.scene_cloud"))
        for oid, p in (fr.get("object_poses") or {}).items():
            rec.object_poses[oid] = _pose(p, f"{where}.object_poses.{oid}", idx)
        for side, p in (fr.get("hand_poses") or {}).items():
            if side not in HANDS:
                raise FormatError("hand side must be left/right", f"{where}.hand_poses.{side}")
            rec.hand_poses[side] = _pose(p, f"{where}.hand_poses.{side}", idx)
        for side, rel in (fr.get("hand_clouds") or {}).items():
            rec.hand_clouds[side] = read_cloud(_asset(root, rel, f"{where}.hand_clouds.{side}"))
        for oid, rel in (fr.get("object_clouds") or {}).items():
            rec.object_clouds[oid] = read_cloud(_asset(root, rel, f"{where}.object_clouds.{oid}"))
        frames.append(rec)

    bundle = ReconBundle(
        bundle_id=str(m.get("bundle_id", root.name)),
        source_frame_count=K,
        frame_rate_source=f,
        frame_rate_target=ft,
        frames=frames,
        objects=objects,
        table_cloud=table,
        hand_meshes=hand_meshes,
        coordinate_frame=m.get("coordinate_frame", "camera"),
        metric=bool(m.get("metric", False)),
        meta=m.get("meta", {}),
    )
    try:
        bundle.validate()
    except InvalidRate as exc:
        raise FormatError(str(exc), "manifest.frame_rate_target") from None
    return bundle


def _pose_list(p: Pose) -> list:
    return [float(x) for x in p.as_array()]


def write_bundle(bundle: ReconBundle, path) -> Path:
    """Write a bundle directory; output bytes depend only on the bundle contents."""
    root = Path(path)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    (root / "frames").mkdir(exist_ok=True)
    objects = []
    for oid, mesh in bundle.objects.items():
        rel = f"meshes/object_{oid}.dxf"
        write_mesh(root / rel, mesh)
        objects.append({"id": oid, "mesh": rel})
    write_cloud(root / "table.dxf", bundle.table_cloud)
    hands = {}
    for side, mesh in bundle.hand_meshes.items():
        rel = f"meshes/hand_{side}.dxf"
        write_mesh(root / rel, mesh)
        hands[side] = rel
    frames = []
    for fr in bundle.frames:
        entry = {"index": fr.index, "timestamp": fr.timestamp}
        stem = f"frames/{fr.index:06d}"
        if fr.scene_cloud is not None:
            write_cloud(root / f"{stem}_scene.dxf", fr.scene_cloud)
            entry["scene_cloud"] = f"{stem}_scene.dxf"
        if fr.object_poses:
            entry["object_poses"] = {k: _pose_list(v) for k, v in fr.object_poses.items()}
        if fr.hand_poses:
            entry["hand_poses"] = {k: _pose_list(v) for k, v in fr.hand_poses.items()}
        if fr.hand_clouds:
            entry["hand_clouds"] = {}
            for side, c in fr.hand_clouds.items():
                write_cloud(root / f"{stem}_hand_{side}.dxf", c)
                entry["hand_clouds"][side] = f"{stem}_hand_{side}.dxf"
        if fr.object_clouds:
            entry["object_clouds"] = {}
            for oid, c in fr.object_clouds.items():
                write_cloud(root / f"{stem}_object_{oid}.dxf", c)
                entry["object_clouds"][oid] = f"{stem}_object_{oid}.dxf"
        frames.append(entry)
    manifest = {
        "format": FORMAT_NAME,
        "version": 1,
        "bundle_id": bundle.bundle_id,
        "coordinate_frame": bundle.coordinate_frame,
        "metric": bundle.metric,
        "source_frame_count": bundle.source_frame_count,
        "frame_rate_source": bundle.frame_rate_source,
        "frame_rate_target": bundle.frame_rate_target,
        "objects": objects,
        "table_cloud": "table.dxf",
        "hand_meshes": hands,
        "frames": frames,
        "meta": bundle.meta,
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return root
