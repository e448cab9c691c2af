"""Independent brute-force references used by the test-suite.

Nothing here shares code with the package beyond the basic data types.
"""

import itertools

import numpy as np


def ray_blocked(origins, direction, tri, skip=None, eps=1e-9):
    """Moller-Trumbore: does a ray from each origin along ``direction`` hit any triangle?

    ``tri`` is (F, 3, 3). ``skip[i]`` is a set of triangle indices ignored for origin i.
    """
    d = np.asarray(direction, dtype=float)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e1, e2 = b - a, c - a
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    good = np.abs(det) > 1e-15
    inv = np.where(good, 1.0 / np.where(good, det, 1.0), 0.0)
    out = np.zeros(len(origins), dtype=bool)
    for i, o in enumerate(origins):
        s = o - a
        u = inv * np.einsum("ij,ij->i", s, h)
        q = np.cross(s, e1)
        v = inv * (q @ d)
        t = inv * np.einsum("ij,ij->i", e2, q)
        hit = good & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > 1e-7)
        if skip is not None and skip[i]:
            hit[list(skip[i])] = False
        out[i] = hit.any()
    return out


def brute_visible_vertices(mesh, view_direction):
    d = np.asarray(view_direction, dtype=float)
    d = d / np.linalg.norm(d)
    skip = [set() for _ in range(len(mesh.vertices))]
    for f, face in enumerate(mesh.faces):
        for v in face:
            skip[v].add(f)
    blocked = ray_blocked(mesh.vertices, -d, mesh.vertices[mesh.faces], skip)
    return np.flatnonzero(~blocked)


def front_facing_samples(mesh, n, view_direction, rng):
    """Uniform surface samples restricted to faces that face the camera (convex meshes)."""
    d = np.asarray(view_direction, dtype=float)
    tri = mesh.vertices[mesh.faces]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area = 0.5 * np.linalg.norm(nrm, axis=1)
    front = (nrm @ d) < 0
    w = np.where(front, area, 0.0)
    f = rng.choice(len(tri), size=n, p=w / w.sum())
    r1, r2 = rng.uniform(size=(2, n))
    s = np.sqrt(r1)
    t = tri[f]
    return (1 - s)[:, None] * t[:, 0] + (s * (1 - r2))[:, None] * t[:, 1] + (s * r2)[:, None] * t[:, 2]


def brute_force_fit(G_list, targets, mu, n_edges=4, top=20.0, min_step=1e-6, max_iter=20000):
    """Grid pattern search over nonnegative friction-pyramid edge weights.

    ``G_list`` are 6x3 grasp maps. Around the incumbent every point of the
    3^n grid {-h, 0, +h}^n (clipped at zero) is evaluated; the search moves
    to the best point (growing h by half) and halves h when the incumbent
    itself is best.
    Returns the summed best squared residual over targets.
    """
    k = np.arange(n_edges)
    edges = np.stack([mu * np.cos(2 * np.pi * k / n_edges), mu * np.sin(2 * np.pi * k / n_edges),
                      np.ones(n_edges)], axis=1)
    cols = np.concatenate([G @ edges.T for G in G_list], axis=1)      # 6 x (C*E)
    n = cols.shape[1]
    offsets = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n)))
    total = 0.0
    for w in np.atleast_2d(targets):
        best = np.zeros(n)
        best_val = float(w @ w)
        h = top
        for _ in range(max_iter):
            if h < min_step:
                break
            cand = np.maximum(best + h * offsets, 0.0)
            r = w[None, :] - cand @ cols.T
            val = np.einsum("ij,ij->i", r, r)
            i = int(np.argmin(val))
            if val[i] < best_val - 1e-15:
                best_val, best = float(val[i]), cand[i]
                h *= 1.5
            else:
                h *= 0.5
        total += best_val
    return total
