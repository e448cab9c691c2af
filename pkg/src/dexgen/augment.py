"""Demonstration augmentation: object pose, object scale, camera and point-cloud noise.

Every function takes its randomness from an explicit ``np.random.Generator``;
the same record and seed always give the same output, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, ContactUnreachable, MissingNormals, WorkspaceViolation
from .geom import ConvexBody, PointCloud, Pose, TriMesh
from .grasp.kinematics import Kinematics
from .motion import blend_joints, interpolate_pose
from .record import KIND_APPROACH, DemoRecord

CONTACT_TOL = 0.002


@dataclass
class AugmentConfig:
    scale_range: tuple = (0.8, 1.2)
    object_xy: float = 0.10                  # m, per axis
    object_yaw: float = math.radians(30.0)
    camera_position: float = 0.05            # m, per axis
    camera_rotation: float = math.radians(5.0)
    p_drop: float = 0.15
    p_noise: float = 0.15
    sigma: float = 0.015                     # m
    delta: float = 0.01                      # m, object point classification threshold
    workspace_x: tuple = (0.2, 1.0)
    workspace_y: tuple = (-0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        self.scale_range = tuple(float(x) for x in self.scale_range)
        self.workspace_x = tuple(float(x) for x in self.workspace_x)
        self.workspace_y = tuple(float(x) for x in self.workspace_y)
        self.validate()

    def validate(self):
        lo, hi = self.scale_range
        if not (0 < lo <= 1.0 <= hi):
            raise ConfigError(f"scale range must satisfy 0 < lo <= 1 <= hi, got {self.scale_range}")
        if not 0.0 <= self.p_drop < 1.0:
            raise ConfigError(f"p_drop must be in [0, 1), got {self.p_drop}")
        if abs(self.p_noise - self.p_drop) > 1e-12:
            # noisy copies fill exactly the dropped slots, so the two must agree
            raise ConfigError(f"p_noise ({self.p_noise}) must equal p_drop ({self.p_drop}) "
                              "to keep the cloud size unchanged")
        for name in ("sigma", "object_xy", "object_yaw", "camera_position", "camera_rotation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")


PRESETS = {
    "appendix-a2": {},
    "main-text": {"p_drop": 0.3, "p_noise": 0.3},
    "identity": {"scale_range": (1.0, 1.0), "object_xy": 0.0, "object_yaw": 0.0, "camera_position": 0.0,
                 "camera_rotation": 0.0, "p_drop": 0.0, "p_noise": 0.0, "sigma": 0.0},
}


def preset(name: str, **overrides) -> AugmentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown augmentation preset {name!r}; known: {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return AugmentConfig(**kw)


@dataclass
class ObservationConfig:
    """Virtual scene used to render per-frame observation clouds."""

    reference_points: int = 256
    table_min: tuple = (0.3, -0.35)
    table_max: tuple = (0.9, 0.35)
    table_grid: int = 12


# --------------------------------------------------------------------------
# point-cloud observation


def extract_object_points(scene: PointCloud, reference: PointCloud, delta: float):
    """Split ``scene`` into (points within ``delta`` of the posed reference, the rest)."""
    if len(scene) == 0 or len(reference) == 0:
        raise ValueError("scene and reference must be non-empty")
    if delta <= 0:
        raise ValueError("delta must be positive")
    mask = object_mask(scene.points, reference.points, delta)
    return scene.subset(mask), scene.subset(~mask)


def object_mask(points, reference_points, delta: float) -> np.ndarray:
    d, _ = cKDTree(reference_points).query(points, k=1, distance_upper_bound=delta)
    return d < delta


def augment_observation(cloud: PointCloud, rng: np.random.Generator, config: AugmentConfig) -> PointCloud:
    """Drop a random fraction, refill with normal-displaced copies of kept points.

    ``round((1 - p_drop) N)`` points are kept (without replacement); the
    remaining slots are filled by kept points drawn with replacement and
    moved along their normals by ``eta ~ N(0, sigma^2)``. The output has the
    input's size; the kept points come first.
    """
    if cloud.normals is None:
        raise MissingNormals("observation noise needs per-point normals")
    n = len(cloud)
    keep = int(round((1.0 - config.p_drop) * n))
    if n == 0 or keep == n:
        return cloud
    keep = max(keep, 1)
    idx = rng.choice(n, size=keep, replace=False)
    kept = cloud.subset(idx)
    src = rng.choice(keep, size=n - keep, replace=True)
    eta = rng.normal(0.0, config.sigma, size=n - keep)
    moved = kept.points[src] + eta[:, None] * kept.normals[src]
    colors = None if kept.colors is None else np.vstack([kept.colors, kept.colors[src]])
    return PointCloud(np.vstack([kept.points, moved]), np.vstack([kept.normals, kept.normals[src]]), colors)


def reference_cloud(mesh: TriMesh, n: int) -> PointCloud:
    """Fixed surface samples of an object (same mesh, same points)."""
    return mesh.sample_surface(n, np.random.default_rng(0))


def _table_cloud(cfg: ObservationConfig) -> PointCloud:
    xs = np.linspace(cfg.table_min[0], cfg.table_max[0], cfg.table_grid)
    ys = np.linspace(cfg.table_min[1], cfg.table_max[1], cfg.table_grid)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.c_[X.ravel(), Y.ravel(), np.zeros(X.size)]
    return PointCloud(pts, np.tile([0.0, 0.0, 1.0], (len(pts), 1)))


def render_scene(record: DemoRecord, t: int, refs, table: PointCloud):
    """World-frame scene at frame ``t``: camera-facing object samples plus the table.

    Returns (scene cloud, posed references concatenated).
    """
    cam = record.camera_pose().translation
    pts, nrm, posed = [table.points], [table.normals], []
    for o, ref in enumerate(refs):
        p = record.object_pose(o, t)
        c = ref.transformed(p)
        posed.append(c.points)
        facing = np.einsum("ij,ij->i", c.normals, cam - c.points) > 0.0
        pts.append(c.points[facing])
        nrm.append(c.normals[facing])
    return PointCloud(np.vstack(pts), np.vstack(nrm)), np.vstack(posed) if posed else np.zeros((0, 3))


def observe_record(record: DemoRecord, rng=None, obs_config: ObservationConfig = None,
                   config: AugmentConfig = None):
    """Per-frame observation clouds in the camera frame (float32, concatenated).

    Object points are found by distance to the posed reference clouds; with
    ``rng`` given they are additionally passed through augment_observation.
    """
    obs_config = obs_config or ObservationConfig()
    config = config or AugmentConfig()
    refs = [reference_cloud(m, obs_config.reference_points) for m in record.object_meshes]
    table = _table_cloud(obs_config)
    to_cam = record.camera_pose().inverse()
    chunks, offsets = [], [0]
    for t in range(record.horizon):
        scene, posed = render_scene(record, t, refs, table)
        if len(posed):
            mask = object_mask(scene.points, posed, config.delta)
            obj, rest = scene.subset(mask), scene.subset(~mask)
        else:
            obj, rest = PointCloud(np.zeros((0, 3)), np.zeros((0, 3))), scene
        if rng is not None and len(obj):
            obj = augment_observation(obj, rng, config)
        pts = to_cam.apply(np.vstack([obj.points, rest.points])).astype(np.float32)
        chunks.append(pts)
        offsets.append(offsets[-1] + len(pts))
    return np.vstack(chunks) if chunks else np.zeros((0, 3), np.float32), np.array(offsets, dtype=np.int64)


# --------------------------------------------------------------------------
# object pose


def object_delta(center, shift_xy, yaw) -> Pose:
    """Yaw about the vertical through ``center`` followed by an xy shift."""
    c = np.asarray(center, dtype=float)
    R = Pose.from_rotvec([0.0, 0.0, yaw])
    return Pose(translation=c + [shift_xy[0], shift_xy[1], 0.0]) @ R @ Pose(translation=-c)


def sample_object_deltas(record: DemoRecord, rng, config: AugmentConfig) -> list:
    out = []
    for o in range(len(record.object_ids)):
        shift = rng.uniform(-config.object_xy, config.object_xy, size=2)
        yaw = rng.uniform(-config.object_yaw, config.object_yaw)
        if config.object_xy == 0.0 and config.object_yaw == 0.0:
            out.append(None)
        else:
            out.append(object_delta(record.object_pose(o, 0).translation, shift, yaw))
    return out


def apply_object_deltas(record: DemoRecord, deltas, config: AugmentConfig = None) -> DemoRecord:
    """Move each object's whole trajectory by its world-frame delta (None = unchanged).

    Frames associated with an object (grasp, transport, release and the
    idling around them) move rigidly with it; approach frames, which run
    from wherever the hand was to the object, are corrected by a delta that
    blends from the start correction to the object's delta.
    """
    out = record.copy()
    N, T = record.n_embodiments, record.horizon
    if all(d is None for d in deltas):
        return out
    for o, D in enumerate(deltas):
        if D is None:
            continue
        for t in range(T):
            out.object_poses[o, t] = (D @ record.object_pose(o, t)).as_array()
        out.target_poses[o] = (D @ Pose.from_array(record.target_poses[o])).as_array()
    if config is not None:
        _check_workspace(out, config)

    ident = Pose()

    def corr(o):
        return ident if o < 0 or deltas[o] is None else deltas[o]

    for e in range(N):
        t = 0
        while t < T:
            if record.kind[e, t] == KIND_APPROACH:
                a = t
                while t + 1 < T and record.kind[e, t + 1] == KIND_APPROACH and record.assoc[e, t + 1] == record.assoc[e, a]:
                    t += 1
                b = t
                c0 = corr(record.assoc[e, a - 1]) if a > 0 and record.kind[e, a - 1] != KIND_APPROACH else ident
                c1 = corr(record.assoc[e, b])
                if c0 is not ident or c1 is not ident:
                    L = b - a + 1
                    for k in range(a, b + 1):
                        C = interpolate_pose(c0, c1, (k - a + 1) / L)
                        out.wrist[e, k] = (C @ record.wrist_pose(e, k)).as_array()
            else:
                D = corr(record.assoc[e, t])
                if D is not ident:
                    out.wrist[e, t] = (D @ record.wrist_pose(e, t)).as_array()
            t += 1

    grasps = []
    for g in record.grasps:
        D = corr(g.get("object_index", -1))
        if D is ident:
            grasps.append(g)
            continue
        g = dict(g)
        g["wrists"] = [(D @ Pose.from_array(w)).as_array().tolist() for w in g["wrists"]]
        g["object_pose"] = (D @ Pose.from_array(g["object_pose"])).as_array().tolist()
        grasps.append(g)
    out.grasps = grasps
    return out


def _check_workspace(record: DemoRecord, config: AugmentConfig):
    xy = record.object_poses[:, :, 4:6]
    (x0, x1), (y0, y1) = config.workspace_x, config.workspace_y
    bad = (xy[..., 0] < x0) | (xy[..., 0] > x1) | (xy[..., 1] < y0) | (xy[..., 1] > y1)
    if np.any(bad):
        o, t = np.argwhere(bad)[0]
        raise WorkspaceViolation(f"object {record.object_ids[o]} at frame {t} leaves the workspace "
                                 f"({xy[o, t, 0]:.3f}, {xy[o, t, 1]:.3f})")


def augment_object_pose(record: DemoRecord, rng, config: AugmentConfig = AugmentConfig()) -> DemoRecord:
    """Random per-object xy shift and yaw applied rigidly to everything tied to the object."""
    deltas = sample_object_deltas(record, rng, config)
    out = apply_object_deltas(record, deltas, config)
    out.provenance["object_deltas"] = [None if d is None else d.as_array().tolist() for d in deltas]
    return out


# --------------------------------------------------------------------------
# object scale


def _flexion_joints(kin: Kinematics, contact_ids) -> dict:
    """finger -> (contact ids, joint ids that bend toward the palm)."""
    hand = kin.hand
    axes = kin.forward(Pose(), np.zeros(kin.n_joints), check=False).joint_axis   # palm frame
    out = {}
    for c in contact_ids:
        cp = hand.contacts[c]
        ids, joints = out.setdefault(cp.finger, ([], set()))
        ids.append(int(c))
        for j in hand.chain[cp.link]:
            if abs(axes[j, 2]) < 0.5:       # orthogonal to the palm normal -> flexion
                joints.add(j)
    return {f: (ids, sorted(js)) for f, (ids, js) in out.items()}


def flexed(q, joints, lower, upper, beta) -> np.ndarray:
    """Flexion joints moved a fraction ``beta`` of the way to their limits.

    ``beta > 0`` closes toward the upper limits, ``beta < 0`` opens toward
    the lower ones, ``beta = 0`` is ``q`` itself.
    """
    out = np.array(q, dtype=float)
    j = np.asarray(joints, dtype=int)
    if beta >= 0:
        out[j] = out[j] + beta * (upper[j] - out[j])
    else:
        out[j] = out[j] + beta * (out[j] - lower[j])
    return out


def adjust_fingers_for_scale(wrist: Pose, q, contacts, surface: ConvexBody, kin: Kinematics,
                             tol: float = CONTACT_TOL, grid: int = 16, iters: int = 50) -> np.ndarray:
    """Re-close each finger onto a rescaled object with the wrist held fixed.

    Per finger, one flexion parameter ``beta`` moves all of that finger's
    flexion joints together (see flexed). A finger whose contact is
    already within ``tol`` of the surface keeps ``beta = 0``, so an unscaled
    object returns ``q`` unchanged. Otherwise ``beta`` is scanned from 0
    toward closing (contact outside) or opening (contact inside) until the
    signed distance changes sign, and that bracket is bisected.
    """
    q = np.asarray(q, dtype=float)
    lo, hi = kin.lower, kin.upper
    out = q.copy()
    changed = False

    def dist(qq, ids):
        fk = kin.forward(wrist, qq, check=False)
        d = surface.signed_distance(fk.contact_pos[ids])
        return float(d[np.argmax(np.abs(d))])

    for finger, (ids, js) in _flexion_joints(kin, contacts).items():
        d0 = dist(out, ids)
        if abs(d0) <= tol:
            continue
        direction = 1.0 if d0 > 0 else -1.0
        a, da = 0.0, d0
        bracket = None
        for k in range(1, grid + 1):
            b = direction * k / grid
            db = dist(flexed(out, js, lo, hi, b), ids)
            if abs(db) <= tol * 0.05 or np.sign(db) != np.sign(da):
                bracket = (a, da, b, db)
                break
            a, da = b, db
        if bracket is None:
            raise ContactUnreachable(f"finger {finger} cannot reach the scaled surface within its joint limits "
                                     f"(closest {min(abs(d0), abs(da)) * 1e3:.1f} mm)")
        a, da, b, db = bracket
        for _ in range(iters):
            if abs(db) <= tol * 0.05:
                break
            m = 0.5 * (a + b)
            dm = dist(flexed(out, js, lo, hi, m), ids)
            if np.sign(dm) == np.sign(da):
                a, da = m, dm
            else:
                b, db = m, dm
        beta = a if abs(da) < abs(db) else b
        out = flexed(out, js, lo, hi, beta)
        changed = True
    return out if changed else q


def augment_scale(record: DemoRecord, c: float, kin: Kinematics, tol: float = CONTACT_TOL,
                  scale_range=(0.8, 1.2)) -> DemoRecord:
    """Scale every object about its centroid and re-close the fingers.

    Wrist poses and the object trajectories are not touched. Joints are
    rebuilt from each frame's closure weight and the adjusted grasp pose.
    """
    lo, hi = scale_range
    if not lo - 1e-12 <= c <= hi + 1e-12:
        raise ConfigError(f"scale factor {c} outside [{lo}, {hi}]")
    out = record.copy()
    out.provenance["scale"] = float(c)
    if c == 1.0:
        return out
    meshes = []
    for m in record.object_meshes:
        meshes.append(m.scaled(c, center=m.volume_centroid()))
    out.object_meshes = meshes
    out.object_scale = record.object_scale * c
    hulls = [ConvexBody(m) for m in meshes]
    grasps = []
    for g_index, g in enumerate(record.grasps):
        g = dict(g)
        o = g["object_index"]
        surface = hulls[o].transformed(Pose.from_array(g["object_pose"]))
        qs = []
        for k, e in enumerate(g["embodiments"]):
            wrist = Pose.from_array(g["wrists"][k])
            q_new = adjust_fingers_for_scale(wrist, g["q"][k], g["contacts"][k], surface, kin, tol)
            qs.append(q_new.tolist())
            rows = record.grasp_index[e] == g_index
            out.joints[e, rows] = blend_joints(record.q_open, q_new, record.grip[e, rows])
        g["q"] = qs
        grasps.append(g)
    out.grasps = grasps
    return out


# --------------------------------------------------------------------------
# camera


def augment_camera(camera: Pose, rng, config: AugmentConfig) -> Pose:
    """Uniform per-axis position jitter and a bounded random-axis rotation."""
    dt = rng.uniform(-1.0, 1.0, size=3) * config.camera_position
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, config.camera_rotation)
    if config.camera_position == 0.0 and config.camera_rotation == 0.0:
        return camera
    return Pose((Pose.from_rotvec(axis * angle) @ camera).rotation, camera.translation + dt)


# --------------------------------------------------------------------------
# whole-record augmentation


def demo_seed(master_seed: int, index: int) -> int:
    """Independent per-demo seed derived from the master seed and demo index."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


def augment_record(source: DemoRecord, seed: int, config: AugmentConfig, kin: Kinematics,
                   obs_config: ObservationConfig = None, record_id: str = None, max_tries: int = 20) -> DemoRecord:
    """Object pose, scale, camera and observation augmentation of one demo."""
    rng = np.random.default_rng(seed)
    for attempt in range(max_tries):
        try:
            rec = augment_object_pose(source, rng, config)
            break
        except WorkspaceViolation:
            if attempt == max_tries - 1:
                raise
    lo, hi = config.scale_range
    c = float(rng.uniform(lo, hi)) if hi > lo else 1.0
    rec = augment_scale(rec, c, kin, scale_range=config.scale_range)
    cam0 = source.camera_pose()
    cam = augment_camera(cam0, rng, config)
    # an untouched camera keeps its stored bits (re-normalizing may not)
    rec.camera = source.camera.copy() if cam is cam0 else cam.as_array()
    pts, offs = observe_record(rec, rng, obs_config, config)
    rec.obs_points, rec.obs_offsets = pts, offs
    rec.record_id = record_id or f"{source.record_id}-aug"
    rec.provenance.update({"source": source.record_id, "seed": int(seed), "scale": c})
    rec.check()
    return rec
