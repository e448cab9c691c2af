"""Grasp maps, friction pyramids and the inner contact-force fit.

Forces at a contact are nonnegative combinations of the pyramid edges
``(mu cos a_k, mu sin a_k, 1)`` in the contact frame (third axis = inward
normal). For each target wrench the fit solves a nonnegative least-squares
problem over the edge weights of all contacts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geom import skew

DEFAULT_MU = 0.5
N_EDGES = 4


def grasp_map(p_c, O_c, m) -> np.ndarray:
    """6x3 map from a contact-frame force to the wrench about ``m``."""
    p_c, m = np.asarray(p_c, dtype=float), np.asarray(m, dtype=float)
    O_c = np.asarray(O_c, dtype=float)
    return np.vstack([O_c, skew(p_c - m) @ O_c])


def friction_edges(mu: float, n_edges: int = N_EDGES) -> np.ndarray:
    """(3, E) pyramid edge directions in the contact frame."""
    a = 2.0 * np.pi * np.arange(n_edges) / n_edges
    return np.vstack([mu * np.cos(a), mu * np.sin(a), np.ones(n_edges)])


def in_friction_pyramid(f_local, mu: float, tol=1e-9) -> np.ndarray:
    """Membership in the 4-edge pyramid |f_x| + |f_y| <= mu f_z."""
    f = np.atleast_2d(f_local)
    return (np.abs(f[:, 0]) + np.abs(f[:, 1]) <= mu * f[:, 2] + tol) & (f[:, 2] >= -tol)


@dataclass(frozen=True)
class WrenchBasis:
    wrenches: np.ndarray   # (J, 6)
    scale: float = 1.0     # lambda, newtons

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.wrenches, dtype=float))
        if w.shape[1] != 6 or len(w) < 1:
            raise ValueError("wrench basis needs at least one 6-vector")
        if not np.allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-9):
            raise ValueError("target wrenches must be unit norm")
        object.__setattr__(self, "wrenches", w)

    @classmethod
    def force_axes(cls, scale=1.0) -> "WrenchBasis":
        """Six unit forces, plus and minus along each axis."""
        w = np.zeros((6, 6))
        for i in range(3):
            w[2 * i, i] = 1.0
            w[2 * i + 1, i] = -1.0
        return cls(w, scale)

    @property
    def targets(self) -> np.ndarray:
        return self.scale * self.wrenches

    def rotated(self, R) -> "WrenchBasis":
        w = self.wrenches.copy()
        w[:, :3] = w[:, :3] @ R.T
        w[:, 3:] = w[:, 3:] @ R.T
        return WrenchBasis(w, self.scale)


# --------------------------------------------------------------------------
# nonnegative least squares


def nnls_active_set(A, b, max_iter=None):
    """Lawson-Hanson active-set solver for min ||A x - b|| s.t. x >= 0."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    tol = 10.0 * np.finfo(float).eps * max(np.abs(A).sum(axis=0).max(initial=0.0), 1.0) * max(m, n)
    w = A.T @ b
    max_iter = max_iter or 3 * n + 10
    it = 0
    while not passive.all() and np.max(np.where(passive, -np.inf, w)) > tol and it < max_iter:
        it += 1
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            z = np.zeros(n)
            idx = np.flatnonzero(passive)
            z[idx] = np.linalg.lstsq(A[:, idx], b, rcond=None)[0]
            if np.all(z[idx] > tol):
                break
            neg = idx[z[idx] <= tol]
            alpha = np.min(x[neg] / np.maximum(x[neg] - z[neg], 1e-300))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                z = np.zeros(n)
                break
        x = z
        w = A.T @ (b - A @ x)
    return np.maximum(x, 0.0)


def nnls_gram(Q, c, passive=None, max_iter=None):
    """Active-set solver for min x'Qx - 2c'x, x >= 0, with Q positive definite.

    Same Lawson-Hanson iteration as ``nnls_active_set`` but on the normal
    equations, which is much cheaper when Q is shared across right-hand sides.
    ``passive`` optionally warm-starts the free set; variables that come out
    negative are dropped until the start is feasible, then the usual
    iteration runs to the exact KKT point.
    """
    n = len(c)
    x = np.zeros(n)
    P = np.zeros(n, dtype=bool) if passive is None else np.asarray(passive, dtype=bool).copy()
    while P.any():
        idx = np.flatnonzero(P)
        z = np.linalg.solve(Q[idx][:, idx], c[idx])
        if np.all(z > 0.0):
            x[idx] = z
            break
        P[idx[z <= 0.0]] = False
    tol = 1e-12 * max(np.abs(Q).max(initial=0.0), 1.0)
    w = c - Q @ x
    max_iter = max_iter or 3 * n + 10
    it = 0
    while not P.all() and np.max(np.where(P, -np.inf, w)) > tol and it < max_iter:
        it += 1
        P[int(np.argmax(np.where(P, -np.inf, w)))] = True
        while True:
            z = np.zeros(n)
            idx = np.flatnonzero(P)
            z[idx] = np.linalg.solve(Q[idx][:, idx], c[idx])
            if np.all(z[idx] > 0.0):
                break
            neg = idx[z[idx] <= 0.0]
            alpha = np.min(x[neg] / np.maximum(x[neg] - z[neg], 1e-300))
            x = x + alpha * (z - x)
            P &= x > 1e-15
            x[~P] = 0.0
            if not P.any():
                break
        x = z
        w = c - Q @ x
    return np.maximum(x, 0.0)


def nnls_projected_gradient(A, b, iters=2000):
    """Accelerated projected gradient (FISTA) on the same problem."""
    A = np.asarray(A, dtype=float)
    Q = A.T @ A
    c = A.T @ b
    L = max(np.linalg.eigvalsh(Q)[-1], 1e-12)
    x = np.zeros(A.shape[1])
    y, tk = x.copy(), 1.0
    for _ in range(iters):
        x_new = np.maximum(y - (Q @ y - c) / L, 0.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = x_new + ((tk - 1.0) / t_new) * (x_new - x)
        x, tk = x_new, t_new
    return x


@dataclass
class ForceFit:
    alphas: np.ndarray       # (J, C*E) edge weights per target
    forces: np.ndarray       # (J, C, 3) contact forces in the common frame
    residuals: np.ndarray    # (J, 6) target minus achieved wrench
    residual: float          # sum of squared residual norms
    regularization: float    # reg * sum of squared edge weights (0 for the plain fit)
    columns: np.ndarray      # (6, C*E) wrench of each unit edge force
    edge_dirs: np.ndarray    # (C, E, 3) edge force directions in the common frame

    def __iter__(self):
        yield self.forces
        yield self.residual

    @property
    def worst_direction(self) -> np.ndarray:
        """Unit 6-vector of the least-resolved target residual (zero if all resolved)."""
        norms = np.linalg.norm(self.residuals, axis=1)
        j = int(np.argmax(norms))
        if norms[j] <= 1e-15:
            return np.zeros(6)
        return self.residuals[j] / norms[j]


def inner_force_fit(G_list, basis: WrenchBasis, mu: float = DEFAULT_MU, method="active-set",
                    n_edges: int = N_EDGES, reg: float = 0.0, warm=None) -> ForceFit:
    """Best cone-feasible contact forces for each target wrench.

    ``G_list`` holds one 6x3 grasp map per contact (columns are the contact
    frame axes mapped to wrenches). ``reg > 0`` adds ``reg * ||alpha||^2``,
    which bounds internal squeezing forces and makes the optimal value a
    continuous, differentiable function of the contact geometry. ``warm``
    (edge weights of a previous fit with the same shape) seeds the active
    sets of the regularized solver; the result does not depend on it.
    """
    G = np.asarray(G_list, dtype=float).reshape(-1, 6, 3)
    if len(G) == 0:
        raise ValueError("need at least one contact")
    E = friction_edges(mu, n_edges)
    cols = np.concatenate([g @ E for g in G], axis=1)                 # (6, C*E)
    edge_dirs = np.stack([(g[:3] @ E).T for g in G])                   # (C, E, 3)
    solve = nnls_active_set if method == "active-set" else nnls_projected_gradient
    targets = basis.targets
    if reg > 0.0 and method == "active-set":
        Q = cols.T @ cols + reg * np.eye(cols.shape[1])
        starts = [None] * len(targets) if warm is None or warm.shape != (len(targets), cols.shape[1]) \
            else list(warm > 0.0)
        alphas = np.stack([nnls_gram(Q, cols.T @ w, p) for w, p in zip(targets, starts)])
    elif reg > 0.0:
        A = np.vstack([cols, np.sqrt(reg) * np.eye(cols.shape[1])])
        pad = np.zeros(cols.shape[1])
        alphas = np.stack([solve(A, np.concatenate([w, pad])) for w in targets])
    else:
        alphas = np.stack([solve(cols, w) for w in targets])
    res = targets - alphas @ cols.T
    forces = np.einsum("jce,ced->jcd", alphas.reshape(len(targets), len(G), n_edges), edge_dirs)
    return ForceFit(alphas, forces, res, float((res ** 2).sum()), float(reg * (alphas ** 2).sum()),
                    cols, edge_dirs)
