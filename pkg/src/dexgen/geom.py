"""Rigid transforms, point clouds, meshes and the convex geometry built on them.

Quaternions are stored scalar-first ``(w, x, y, z)`` and canonicalized so that
``w >= 0``. Lengths are meters and angles radians throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.spatial import ConvexHull as _QhullHull
from scipy.spatial import QhullError

from .errors import DegenerateCloud, EmptyInput

TRIM_MIN_POINTS = 200
TRIM_PERCENTILES = (1.0, 99.0)


# --------------------------------------------------------------------------
# quaternion helpers


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q}")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Shepperd's method; picks the numerically largest pivot."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = 2.0 * np.sqrt(max(1.0 + tr, 0.0))
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] + R[1, 1] - R[2, 2], 0.0))
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] - R[1, 1] + R[2, 2], 0.0))
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_rotvec(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        # second-order series keeps the map smooth at zero
        q = np.array([1.0 - angle * angle / 8.0, *(0.5 * rv)])
        return quat_normalize(q)
    half = 0.5 * angle
    return quat_normalize(np.array([np.cos(half), *(np.sin(half) / angle * rv)]))


def quat_to_rotvec(q) -> np.ndarray:
    q = quat_normalize(q)
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * np.arctan2(s, q[0])
    return angle / s * v


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_about(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return quat_to_matrix(quat_from_rotvec(axis * angle))


# --------------------------------------------------------------------------
# Pose


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t`` with R stored as a unit quaternion."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(self.rotation)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite translation")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(quat_from_rotvec(rotvec), translation)

    @classmethod
    def from_array(cls, a) -> "Pose":
        a = np.asarray(a, dtype=float)
        return cls(a[:4], a[4:7])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.rotation)

    def compose(self, other: "Pose") -> "Pose":
        return pose_compose(self, other)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        qi = quat_conj(self.rotation)
        return Pose(qi, -(quat_to_matrix(qi) @ self.translation))

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.R.T

    def angle(self) -> float:
        return rotation_geodesic_angle(self.R, np.eye(3))

    def allclose(self, other: "Pose", atol=1e-9) -> bool:
        return (rotation_geodesic_angle(self, other) <= atol
                and np.linalg.norm(self.translation - other.translation) <= atol)

    def __repr__(self):
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"Pose(q={q}, t={t})"


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Transform that applies ``b`` first, then ``a``."""
    q = quat_mul(a.rotation, b.rotation)
    t = quat_to_matrix(a.rotation) @ b.translation + a.translation
    return Pose(q, t)


def _as_rotation_matrix(r) -> np.ndarray:
    if isinstance(r, Pose):
        return r.R
    r = np.asarray(r, dtype=float)
    if r.shape == (4,):
        return quat_to_matrix(quat_normalize(r))
    if r.shape == (3, 3):
        return r
    if r.shape == (4, 4):
        return r[:3, :3]
    raise ValueError(f"not a rotation: shape {r.shape}")


def rotation_geodesic_angle(Ra, Rb) -> float:
    """Angle of ``Ra Rb^T`` in ``[0, pi]``; accepts matrices, quaternions or Poses."""
    A = _as_rotation_matrix(Ra)
    B = _as_rotation_matrix(Rb)
    M = A @ B.T
    c = (np.trace(M) - 1.0) / 2.0
    # atan2 form of arccos(c): same angle, no precision loss near 0 and pi
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))


# --------------------------------------------------------------------------
# clouds and meshes


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = len(self.points)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(self.normals) != n:
                raise ValueError("normals/points length mismatch")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
            if len(self.colors) != n:
                raise ValueError("colors/points length mismatch")

    def __len__(self):
        return len(self.points)

    def transformed(self, pose: Pose) -> "PointCloud":
        normals = None if self.normals is None else pose.apply_vectors(self.normals)
        return PointCloud(pose.apply(self.points), normals, self.colors)

    def scaled(self, s: float) -> "PointCloud":
        return PointCloud(self.points * s, self.normals, self.colors)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.colors is None else self.colors[idx],
        )

    def check_normals(self, atol=1e-6):
        if self.normals is not None:
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > atol):
                raise ValueError("normals are not unit length")


@dataclass(eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        V = len(self.vertices)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= V):
            raise ValueError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("degenerate face (repeated vertex)")

    def __len__(self):
        return len(self.vertices)

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        tri = self.triangles
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def face_areas(self) -> np.ndarray:
        tri = self.triangles
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def volume_centroid(self) -> np.ndarray:
        """Center of mass of the enclosed solid (uniform density, closed mesh)."""
        tri = self.triangles
        vol = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0
        total = vol.sum()
        if abs(total) < 1e-18:
            return self.vertices.mean(axis=0)
        return (vol[:, None] * tri.sum(axis=1) / 4.0).sum(axis=0) / total

    def transformed(self, pose: Pose) -> "TriMesh":
        return TriMesh(pose.apply(self.vertices), self.faces)

    def scaled(self, s: float, center=None) -> "TriMesh":
        c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
        return TriMesh(c + s * (self.vertices - c), self.faces)

    def sample_surface(self, n: int, rng: np.random.Generator) -> PointCloud:
        """Area-weighted uniform surface samples with face normals."""
        areas = self.face_areas()
        face = rng.choice(len(areas), size=n, p=areas / areas.sum())
        u = rng.random((n, 2))
        flip = u.sum(axis=1) > 1.0
        u[flip] = 1.0 - u[flip]
        tri = self.triangles[face]
        pts = tri[:, 0] + u[:, :1] * (tri[:, 1] - tri[:, 0]) + u[:, 1:] * (tri[:, 2] - tri[:, 0])
        return PointCloud(pts, self.face_normals()[face])


# --------------------------------------------------------------------------
# cloud statistics


def _points_of(geom) -> np.ndarray:
    if isinstance(geom, PointCloud):
        return geom.points
    if isinstance(geom, TriMesh):
        return geom.vertices
    return np.asarray(geom, dtype=float).reshape(-1, 3)


def _centered_eig(points, weights=None):
    if weights is None:
        c = points.mean(axis=0)
        X = points - c
        cov = X.T @ X / len(points)
    else:
        c = weights @ points
        X = points - c
        cov = (X * weights[:, None]).T @ X
    w, V = np.linalg.eigh(cov)
    return c, X, w, V


def _extent(proj: np.ndarray, weights=None) -> float:
    if len(proj) >= TRIM_MIN_POINTS:
        if weights is None:
            lo, hi = np.percentile(proj, TRIM_PERCENTILES)
        else:
            lo, hi = np.percentile(proj, TRIM_PERCENTILES, weights=weights, method="inverted_cdf")
        return float(hi - lo)
    return float(proj.max() - proj.min())


def principal_axis_length(cloud, weights=None) -> float:
    """Extent of the cloud along its dominant principal axis.

    Uses the 1st-99th percentile span of the projections once the cloud has
    at least ``TRIM_MIN_POINTS`` points, the full range below that. When the
    top eigenvalue is repeated the axis is not unique; the direction inside
    that eigenspace with the largest spread of the points is used.

    Optional nonnegative ``weights`` (one per point) make the mean,
    covariance and percentiles weighted, e.g. mesh vertices weighted by the
    surface area they stand for.
    """
    pts = _points_of(cloud)
    if len(pts) < 2:
        raise DegenerateCloud("principal axis needs at least two points")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(pts),) or np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per point, not all zero")
        weights = weights / weights.sum()
    _, X, w, V = _centered_eig(pts, weights)
    if np.ptp(pts, axis=0).max() == 0.0:
        raise DegenerateCloud("all points coincide")
    tied = w >= w[-1] * (1.0 - 1e-9)
    if tied.sum() == 1:
        axis = V[:, -1]
    else:
        # farthest pair of the points projected into the tied eigenspace
        B = V[:, tied]
        Y = X @ B
        if len(Y) > 64:
            try:
                Y = Y[_QhullHull(Y).vertices]
            except QhullError:
                pass
        d2 = ((Y[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
        i, j = np.unravel_index(np.argmax(d2), d2.shape)
        axis = B @ (Y[i] - Y[j])
        axis /= np.linalg.norm(axis)
    return _extent(X @ axis, weights)


def fit_plane_normal(cloud) -> np.ndarray:
    """Least-squares plane normal, oriented toward the camera origin."""
    pts = _points_of(cloud)
    if len(pts) < 3:
        raise DegenerateCloud("plane fit needs at least three points")
    c, _, w, V = _centered_eig(pts)
    if w[-1] <= 0.0 or w[1] <= 1e-12 * w[-1]:
        raise DegenerateCloud("points are collinear")
    n = V[:, 0]
    side = float(n @ (-c))
    if side < 0.0 or (side == 0.0 and n[2] > 0.0):
        n = -n
    return n / np.linalg.norm(n)


def aabb_center(geoms: Iterable) -> np.ndarray:
    lo, hi = None, None
    for g in geoms:
        pts = _points_of(g)
        if len(pts) == 0:
            continue
        glo, ghi = pts.min(axis=0), pts.max(axis=0)
        lo = glo if lo is None else np.minimum(lo, glo)
        hi = ghi if hi is None else np.maximum(hi, ghi)
    if lo is None:
        raise EmptyInput("no geometry to bound")
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# convex hulls and distance queries


def convex_hull(points) -> TriMesh:
    """Outward-oriented triangulated hull of the points."""
    pts = _points_of(points)
    if len(pts) < 4:
        raise DegenerateCloud("hull needs at least four points")
    try:
        h = _QhullHull(pts)
    except QhullError as exc:
        raise DegenerateCloud(f"points are coplanar or degenerate: {exc.args[0].splitlines()[0]}") from None
    keep = np.unique(h.simplices)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    faces = remap[h.simplices]
    verts = pts[keep]
    tri = verts[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", n, h.equations[:, :3]) < 0.0
    faces[flip] = faces[flip][:, ::-1]
    return TriMesh(verts, faces)


def closest_points_on_triangles(p, a, b, c):
    """Closest points on each triangle to each query point.

    ``p`` is (P, 3); ``a, b, c`` are (F, 3). Returns (P, F, 3). Region logic
    follows Ericson, Real-Time Collision Detection, 5.1.5.
    """
    p = np.asarray(p, dtype=float)[:, None, :]
    a, b, c = (np.asarray(x, dtype=float)[None] for x in (a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("pfi,pfi->pf", np.broadcast_to(ab, ap.shape), ap)
    d2 = np.einsum("pfi,pfi->pf", np.broadcast_to(ac, ap.shape), ap)
    bp = p - b
    d3 = np.einsum("pfi,pfi->pf", np.broadcast_to(ab, bp.shape), bp)
    d4 = np.einsum("pfi,pfi->pf", np.broadcast_to(ac, bp.shape), bp)
    cp = p - c
    d5 = np.einsum("pfi,pfi->pf", np.broadcast_to(ab, cp.shape), cp)
    d6 = np.einsum("pfi,pfi->pf", np.broadcast_to(ac, cp.shape), cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)
    v = vb / denom
    w = vc / denom
    out = a + ab * v[..., None] + ac * w[..., None]

    with np.errstate(divide="ignore", invalid="ignore"):
        # edge BC
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(m[..., None], b + (c - b) * t[..., None], out)
        # edge AC
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        out = np.where(m[..., None], a + ac * t[..., None], out)
        # edge AB
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        out = np.where(m[..., None], a + ab * t[..., None], out)
    # vertex regions override edges
    m = (d6 >= 0) & (d5 <= d6)
    out = np.where(m[..., None], np.broadcast_to(c, out.shape), out)
    m = (d3 >= 0) & (d4 <= d3)
    out = np.where(m[..., None], np.broadcast_to(b, out.shape), out)
    m = (d1 <= 0) & (d2 <= 0)
    out = np.where(m[..., None], np.broadcast_to(a, out.shape), out)
    return out


def closest_points_on_mesh(points, mesh: TriMesh):
    """(closest points (P,3), distances (P,)) to the mesh surface."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tri = mesh.triangles
    if len(tri) > 64 and len(pts) * len(tri) > 0:
        # cull with bounding spheres: a triangle can only win if its lower
        # bound beats the best vertex distance (an upper bound)
        center = tri.mean(axis=1)
        rad = np.sqrt(((tri - center[:, None, :]) ** 2).sum(-1).max(axis=1))
        dc = np.sqrt(((pts[:, None, :] - center[None]) ** 2).sum(-1))
        upper = np.sqrt(((pts[:, None, :] - mesh.vertices[None]) ** 2).sum(-1).min(axis=1))
        keep = np.flatnonzero(((dc - rad[None]) <= upper[:, None] + 1e-12).any(axis=0))
        tri = tri[keep]
    cp = closest_points_on_triangles(pts, tri[:, 0], tri[:, 1], tri[:, 2])
    d2 = ((cp - pts[:, None, :]) ** 2).sum(-1)
    k = np.argmin(d2, axis=1)
    best = cp[np.arange(len(pts)), k]
    return best, np.sqrt(d2[np.arange(len(pts)), k])


class ConvexBody:
    """A convex hull with half-space and exact distance queries."""

    def __init__(self, mesh_or_points):
        pts = _points_of(mesh_or_points)
        self.mesh = convex_hull(pts)
        self.normals = self.mesh.face_normals()
        self.offsets = np.einsum("ij,ij->i", self.normals, self.mesh.triangles[:, 0])
        self.center = self.mesh.vertices.mean(axis=0)

    def transformed(self, pose: Pose) -> "ConvexBody":
        out = object.__new__(ConvexBody)
        out.mesh = self.mesh.transformed(pose)
        out.normals = pose.apply_vectors(self.normals)
        out.offsets = np.einsum("ij,ij->i", out.normals, out.mesh.triangles[:, 0])
        out.center = pose.apply(self.center)
        return out

    def contains(self, points, tol=1e-9) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all(pts @ self.normals.T - self.offsets <= tol, axis=1)

    def signed_distance(self, points, return_gradient=False, exact_below=None):
        """Exact signed distance (negative inside) and its gradient.

        With ``exact_below`` set, outside points whose half-space bound
        already exceeds it keep that bound (a lower bound on the distance)
        instead of the exact value.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = pts @ self.normals.T - self.offsets
        k = np.argmax(h, axis=1)
        sd = h[np.arange(len(pts)), k]
        grad = self.normals[k].copy()
        out = sd > 0.0
        if exact_below is not None:
            out &= sd < exact_below
        if np.any(out):
            cp, d = closest_points_on_mesh(pts[out], self.mesh)
            sd[out] = d
            g = pts[out] - cp
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            safe = gn[:, 0] > 1e-15
            g[safe] /= gn[safe]
            g[~safe] = self.normals[k[out]][~safe]
            grad[out] = g
        if return_gradient:
            return sd, grad
        return sd

    def ray_exit(self, origin, direction) -> np.ndarray:
        """Point where the ray from an interior origin leaves the body."""
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        o = np.asarray(origin, dtype=float)
        nd = self.normals @ d
        fwd = nd > 1e-12
        t = (self.offsets[fwd] - self.normals[fwd] @ o) / nd[fwd]
        return o + t.min() * d

    def penetration_depth(self, other: "ConvexBody") -> float:
        """Minimum overlap over both bodies' face normals (0 if separated).

        Separating-axis test restricted to face normals; it can only
        over-report depth when the true separating axis is an edge-edge
        cross product.
        """
        axes = np.vstack([self.normals, other.normals])
        pa = self.mesh.vertices @ axes.T
        pb = other.mesh.vertices @ axes.T
        overlap = np.minimum(pa.max(0) - pb.min(0), pb.max(0) - pa.min(0))
        return float(max(overlap.min(), 0.0))
