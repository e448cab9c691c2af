"""Primitive triangle meshes used for fixtures, tests and synthetic scenes."""

from __future__ import annotations

import numpy as np

from .geom import TriMesh


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    V = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriMesh(V, np.array(faces))


def ellipsoid(semi_axes, subdivisions=3) -> TriMesh:
    m = icosphere(1.0, subdivisions)
    return TriMesh(m.vertices * np.asarray(semi_axes, dtype=float), m.faces)


def box(extents, divisions=1) -> TriMesh:
    """Axis-aligned box centered at the origin; each face split into a grid."""
    ex = np.asarray(extents, dtype=float) / 2.0
    n = int(divisions)
    verts, faces, index = [], [], {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    g = np.linspace(-1.0, 1.0, n + 1)
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        for sign in (-1.0, 1.0):
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = sign
                        p[u] = g[i + di]
                        p[v] = g[j + dj]
                        quad.append(vid(p * ex))
                    a, b, c, d = quad
                    tri = [(a, b, c), (a, c, d)]
                    # outward winding
                    pa, pb, pc = (np.array(verts[k]) for k in tri[0])
                    if np.cross(pb - pa, pc - pa)[axis] * sign < 0:
                        tri = [(a, c, b), (a, d, c)]
                    faces += tri
    return TriMesh(np.array(verts), np.array(faces))


def cylinder(radius, height, segments=32, rings=1) -> TriMesh:
    """Closed cylinder along z, centered at the origin."""
    ang = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    zs = np.linspace(-height / 2.0, height / 2.0, rings + 1)
    verts = [(radius * np.cos(a), radius * np.sin(a), z) for z in zs for a in ang]
    faces = []
    for r in range(rings):
        for k in range(segments):
            a = r * segments + k
            b = r * segments + (k + 1) % segments
            c = a + segments
            d = b + segments
            faces += [(a, b, d), (a, d, c)]
    bottom = len(verts)
    verts.append((0.0, 0.0, -height / 2.0))
    top = len(verts)
    verts.append((0.0, 0.0, height / 2.0))
    last = rings * segments
    for k in range(segments):
        faces.append((bottom, (k + 1) % segments, k))
        faces.append((top, last + k, last + (k + 1) % segments))
    return TriMesh(np.array(verts), np.array(faces))
