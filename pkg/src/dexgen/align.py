"""Metric scale recovery and the camera-to-world transform.

The reconstructed depth is only defined up to scale. A canonical hand mesh of
known metric size is aligned to the observed hand points (centroid match,
keep the camera-visible part of the mesh, centroid match again) and the
ratio of principal-axis lengths gives the scale. The world frame puts the
table at z = 0 with +z up, +y toward the demonstrator's left hand and the
first-frame objects at a fixed x in front of the robot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateCloud, DegenerateHands, EmptyInput
from .geom import PointCloud, Pose, TriMesh, aabb_center, fit_plane_normal, principal_axis_length
from .ingest.bundle import FrameRecord, ReconBundle

log = logging.getLogger(__name__)

DEFAULT_CELL = 0.005
MIN_VISIBLE = 50
CAMERA_VIEW = np.array([0.0, 0.0, 1.0])


def _view_basis(d):
    d = np.asarray(d, dtype=float)
    d = d / np.linalg.norm(d)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    return d, u, np.cross(d, u)


def _raster_nearest(depth, cells):
    """Index of the nearest vertex in each occupied cell."""
    order = np.lexsort((depth, cells[:, 1], cells[:, 0]))
    c = cells[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(c[1:] != c[:-1], axis=1)
    return np.sort(order[first])


def visible_subset(mesh: TriMesh, view_direction, cell_size: float = DEFAULT_CELL,
                   method: str = "exact") -> np.ndarray:
    """Vertices seen by parallel rays travelling along ``view_direction``.

    ``method="exact"`` casts one ray per vertex back toward the camera and
    keeps the vertex when no triangle blocks it; triangles are bucketed into
    raster cells of ``cell_size`` so each ray only tests nearby faces.
    ``method="raster"`` keeps only the nearest vertex per raster cell.
    """
    V = mesh.vertices
    if len(V) == 0:
        raise EmptyInput("mesh has no vertices")
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    d, u, w = _view_basis(view_direction)
    depth = V @ d
    P = np.c_[V @ u, V @ w]
    if method == "raster":
        return _raster_nearest(depth, np.floor(P / cell_size).astype(np.int64))
    if method != "exact":
        raise ValueError(f"unknown visibility method {method!r}")

    F = mesh.faces
    tri2 = P[F]                                   # (F, 3, 2)
    lo = np.floor(tri2.min(axis=1) / cell_size).astype(np.int64)
    hi = np.floor(tri2.max(axis=1) / cell_size).astype(np.int64)
    span = hi - lo + 1
    ncell = span[:, 0] * span[:, 1]
    tri_id = np.repeat(np.arange(len(F)), ncell)
    local = np.arange(ncell.sum()) - np.repeat(np.cumsum(ncell) - ncell, ncell)
    cx = lo[tri_id, 0] + local // span[tri_id, 1]
    cy = lo[tri_id, 1] + local % span[tri_id, 1]
    # hash cells into a single sortable key
    ox, oy = cx.min() if len(cx) else 0, cy.min() if len(cy) else 0
    width = (cy.max() - oy + 1) if len(cy) else 1
    key = (cx - ox) * width + (cy - oy)
    order = np.argsort(key, kind="stable")
    key, tri_id = key[order], tri_id[order]

    vc = np.floor(P / cell_size).astype(np.int64)
    vkey = (vc[:, 0] - ox) * width + (vc[:, 1] - oy)
    inside = (vc[:, 0] >= ox) & (vc[:, 1] >= oy) & (vc[:, 1] - oy < width)
    start = np.searchsorted(key, vkey, side="left")
    stop = np.searchsorted(key, vkey, side="right")
    stop[~inside] = start[~inside]
    counts = stop - start
    vid = np.repeat(np.arange(len(V)), counts)
    pair_tri = tri_id[np.repeat(start, counts) + np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)]

    # drop the faces a vertex belongs to
    own = np.any(F[pair_tri] == vid[:, None], axis=1)
    vid, pair_tri = vid[~own], pair_tri[~own]

    a, b, c = (tri2[pair_tri, k] for k in range(3))
    p = P[vid]
    v0, v1, v2 = b - a, c - a, p - a
    den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
    scale = np.ptp(V, axis=0).max() or 1.0
    ok = np.abs(den) > 1e-14 * scale * scale
    den = np.where(ok, den, 1.0)
    beta = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / den
    gamma = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / den
    alpha = 1.0 - beta - gamma
    eps = 1e-9
    covered = ok & (alpha >= -eps) & (beta >= -eps) & (gamma >= -eps)
    dz = depth[F[pair_tri]]
    hit_depth = alpha * dz[:, 0] + beta * dz[:, 1] + gamma * dz[:, 2]
    blocked = covered & (hit_depth < depth[vid] - 1e-7 * scale)
    occluded = np.zeros(len(V), dtype=bool)
    occluded[vid[blocked]] = True
    return np.flatnonzero(~occluded)


def _visible_with_fallback(mesh, view_direction, cell_size, method):
    idx = visible_subset(mesh, view_direction, cell_size, method)
    if len(idx) < MIN_VISIBLE:
        idx = visible_subset(mesh, view_direction, cell_size / 2.0, method)
    return idx


def _points(c) -> np.ndarray:
    pts = c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise DegenerateCloud("observed cloud is empty")
    return pts


def align_render_align(mesh: TriMesh, observed, view_direction=CAMERA_VIEW,
                       cell_size: float = DEFAULT_CELL, method: str = "exact"):
    """Return ``(translation, s)`` aligning ``mesh`` to the observed points.

    ``translation`` moves the mesh onto the cloud; ``s`` is the factor that
    brings the cloud to the mesh's metric size.
    """
    obs = _points(observed)
    if len(mesh.vertices) == 0:
        raise DegenerateCloud("mesh is empty")
    target = obs.mean(axis=0)
    t1 = target - mesh.vertices.mean(axis=0)
    moved = mesh.vertices + t1
    idx = _visible_with_fallback(mesh, view_direction, cell_size, method)
    vis = moved[idx]
    translation = t1 + (target - vis.mean(axis=0))
    s = principal_axis_length(vis, _surface_weights(mesh, idx, view_direction)) / principal_axis_length(obs)
    return translation, float(s)


def _surface_weights(mesh: TriMesh, idx, view_direction):
    """Front-facing area around each visible vertex (a third of each incident face).

    Observed clouds sample the surface uniformly by area while mesh vertices
    can be packed unevenly; weighting makes the two statistics comparable.
    Returns None (plain vertex statistics) when no front face is found.
    """
    tri = mesh.vertices[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    front = n @ np.asarray(view_direction, dtype=float) < 0.0
    area = np.zeros(len(mesh.vertices))
    a = 0.5 * np.linalg.norm(n[front], axis=1) / 3.0
    for k in range(3):
        np.add.at(area, mesh.faces[front, k], a)
    w = area[idx]
    return w if w.sum() > 0.0 else None


def refine_hand_translation(hand_mesh: TriMesh, observed, view_direction=CAMERA_VIEW,
                            cell_size: float = DEFAULT_CELL, method: str = "exact") -> np.ndarray:
    """Translation placing the already-oriented hand mesh onto its points."""
    t, _ = align_render_align(hand_mesh, observed, view_direction, cell_size, method)
    return t


@dataclass(frozen=True)
class WorldFrame:
    transform: Pose              # camera -> world
    table_normal_camera: np.ndarray
    x_axis_camera: np.ndarray
    y_axis_camera: np.ndarray
    origin_camera: np.ndarray
    scale_factor: float = 1.0

    @property
    def camera_pose(self) -> Pose:
        """Camera pose expressed in the world frame."""
        return self.transform

    def to_dict(self) -> dict:
        return {
            "transform": [float(x) for x in self.transform.as_array()],
            "rotation_matrix": self.transform.R.tolist(),
            "table_normal_camera": self.table_normal_camera.tolist(),
            "x_axis_camera": self.x_axis_camera.tolist(),
            "y_axis_camera": self.y_axis_camera.tolist(),
            "origin_camera": self.origin_camera.tolist(),
            "scale_factor": self.scale_factor,
        }


def build_world_frame(table_cloud, left_hand_pos, right_hand_pos, first_frame_objects,
                      workspace_x: float = 0.6, scale_factor: float = 1.0) -> WorldFrame:
    z = fit_plane_normal(table_cloud)
    l = np.asarray(left_hand_pos, dtype=float)
    r = np.asarray(right_hand_pos, dtype=float)
    if np.linalg.norm(l - r) <= 1e-3:
        raise DegenerateHands(f"hands coincide (separation {np.linalg.norm(l - r):.2e} m)")
    v = (l - r) - ((l - r) @ z) * z
    if np.linalg.norm(v) <= 1e-6:
        raise DegenerateHands("hand separation is parallel to the table normal")
    y = v / np.linalg.norm(v)
    x = np.cross(y, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    M = np.c_[x, y, z]            # world axes in camera coordinates
    c = aabb_center(first_frame_objects)
    table_pts = table_cloud.points if isinstance(table_cloud, PointCloud) else np.asarray(table_cloud)
    height = float((c - table_pts.mean(axis=0)) @ z)
    origin = c - workspace_x * x - height * z
    R = M.T
    transform = Pose.from_rt(R, -R @ origin)
    return WorldFrame(transform, z, x, y, origin, float(scale_factor))


# --------------------------------------------------------------------------
# whole-bundle alignment


def _scaled_pose(p: Pose, s: float) -> Pose:
    return Pose(p.rotation, p.translation * s)


def _scale_cloud(c, s):
    return None if c is None else c.scaled(s)


def estimate_scale(bundle: ReconBundle, view_direction=CAMERA_VIEW, cell_size=DEFAULT_CELL,
                   method="exact") -> float:
    """Scale from the first frame's hand observations (mean over visible hands)."""
    fr = bundle.frames[0]
    est = []
    for side in ("left", "right"):
        cloud = fr.hand_clouds.get(side)
        mesh = bundle.hand_meshes.get(side)
        pose = fr.hand_poses.get(side)
        if cloud is None or mesh is None or pose is None or len(cloud) < 3:
            continue
        oriented = mesh.transformed(Pose(pose.rotation))
        est.append(align_render_align(oriented, cloud, view_direction, cell_size, method)[1])
    if not est:
        if bundle.metric:
            return 1.0
        raise DegenerateCloud("first frame has no hand cloud and mesh to estimate scale from")
    return float(np.mean(est))


def align_bundle(bundle: ReconBundle, workspace_x: float = 0.6, view_direction=CAMERA_VIEW,
                 cell_size=DEFAULT_CELL, method="exact"):
    """Scale the camera-frame bundle to meters and move it into the world frame.

    Returns ``(world_bundle, world_frame)``. Hand translations are refined per
    frame from the scaled hand points; orientations are kept.
    """
    if bundle.coordinate_frame != "camera":
        raise ValueError("bundle is already aligned")
    s = 1.0 if bundle.metric else estimate_scale(bundle, view_direction, cell_size, method)
    log.info("scale factor s=%.6f", s)

    frames = []
    for fr in bundle.frames:
        hands = {}
        for side, p in fr.hand_poses.items():
            cloud = _scale_cloud(fr.hand_clouds.get(side), s)
            mesh = bundle.hand_meshes.get(side)
            if cloud is not None and mesh is not None and len(cloud) >= 3:
                oriented = mesh.transformed(Pose(p.rotation))
                t = refine_hand_translation(oriented, cloud, view_direction, cell_size, method)
                hands[side] = Pose(p.rotation, t)
            else:
                hands[side] = _scaled_pose(p, s)
        frames.append(FrameRecord(
            index=fr.index, timestamp=fr.timestamp,
            scene_cloud=_scale_cloud(fr.scene_cloud, s),
            object_poses={k: _scaled_pose(v, s) for k, v in fr.object_poses.items()},
            hand_poses=hands,
            hand_clouds={k: v.scaled(s) for k, v in fr.hand_clouds.items()},
            object_clouds={k: v.scaled(s) for k, v in fr.object_clouds.items()},
        ))
    objects = {k: m.scaled(s, center=np.zeros(3)) for k, m in bundle.objects.items()}
    table = bundle.table_cloud.scaled(s)

    f0 = frames[0]
    if "left" not in f0.hand_poses or "right" not in f0.hand_poses:
        raise DegenerateHands("first frame needs both hand poses to fix the world axes")
    first_objects = [objects[k].transformed(p) for k, p in f0.object_poses.items()]
    if not first_objects:
        first_objects = [table]
    wf = build_world_frame(table, f0.hand_poses["left"].translation, f0.hand_poses["right"].translation,
                           first_objects, workspace_x, s)
    T = wf.transform

    def to_world(fr: FrameRecord) -> FrameRecord:
        return FrameRecord(
            index=fr.index, timestamp=fr.timestamp,
            scene_cloud=None if fr.scene_cloud is None else fr.scene_cloud.transformed(T),
            object_poses={k: T @ v for k, v in fr.object_poses.items()},
            hand_poses={k: T @ v for k, v in fr.hand_poses.items()},
            hand_clouds={k: v.transformed(T) for k, v in fr.hand_clouds.items()},
            object_clouds={k: v.transformed(T) for k, v in fr.object_clouds.items()},
        )

    meta = dict(bundle.meta)
    meta["world_frame"] = wf.to_dict()
    out = replace(bundle, frames=[to_world(f) for f in frames], objects=objects,
                  table_cloud=table.transformed(T), coordinate_frame="world", metric=True, meta=meta)
    return out, wf
