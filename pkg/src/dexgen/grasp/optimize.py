"""Force-closure grasp synthesis by projected gradient descent.

The objective per candidate is

    kw * min_alpha>=0 sum_j ||lam w_j - A alpha_j||^2 + rho ||alpha_j||^2
  + kcon * sum_c d(p_c, M)^2                 (contacts on the surface)
  + kcoll * sum_s max(0, r_s - sd(x_s))^2    (hand spheres outside the hull)
  + khh * sum_pairs max(0, r_a + r_b - |x_a - x_b|)^2

over wrist translation, wrist rotation (left-multiplied axis-angle
increments about the wrist position) and joint angles of every hand.
The wrench term is differentiated through the inner fit with the envelope
theorem: at the optimal edge weights only the explicit dependence of A on
the contact positions and frames remains. The small force penalty rho keeps
that inner minimizer unique; without it a nearly degenerate contact layout
can reach a target with unbounded squeezing forces and the wrench term jumps
as soon as the layout tips the other way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import NoConverge
from ..geom import Pose, closest_points_on_mesh, quat_from_rotvec, quat_mul
from .candidate import GraspCandidate, GraspObject, HandState
from .forces import DEFAULT_MU, WrenchBasis, grasp_map, inner_force_fit
from .kinematics import Kinematics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraspWeights:
    wrench: float = 1.0
    contact: float = 10.0
    collision: float = 100.0
    hand_hand: float = 100.0
    force_reg: float = 1e-4


@dataclass(frozen=True)
class OptimizerSettings:
    max_iter: int = 200
    step0: float = 1e-2
    shrink: float = 0.5
    grow: float = 2.0
    armijo: float = 1e-4
    rel_tol: float = 1e-6
    max_backtracks: int = 40
    length_scale: float = 0.05     # meters per radian for rotation / joint preconditioning
    memory: int = 8
    max_displacement: float = 0.02  # scaled-coordinate cap on a single trial step
    restore_below: float = 1e-8     # unweighted collision + hand-hand level that ends restoration
    objective_max: float = 0.05
    residual_max: float = 0.05
    contact_max: float = 0.002
    penetration_max: float = 0.001


@dataclass
class Evaluation:
    value: float
    terms: dict
    fit: object
    grads: list            # per hand (grad_t, grad_w, grad_q)
    contact_dist: np.ndarray
    penetration: float


class GraspProblem:
    """Objective and analytic gradient for a fixed object and contact assignment."""

    def __init__(self, kin: Kinematics, obj: GraspObject, contacts, basis: WrenchBasis = None,
                 mu: float = DEFAULT_MU, weights: GraspWeights = GraspWeights()):
        self.kin = kin
        self.obj = obj
        self.contacts = tuple(np.asarray(c, dtype=np.int64) for c in contacts)
        if any(len(c) == 0 for c in self.contacts):
            raise ValueError("every hand needs at least one active contact")
        self.basis = basis if basis is not None else WrenchBasis.force_axes()
        self.mu = mu
        self.w = weights
        self.r_max = float(kin.sphere_radius.max()) if len(kin.sphere_radius) else 0.0
        self._warm = None

    def evaluate(self, hands, gradient=True, penalties_only=False) -> Evaluation:
        """Objective, its terms and per-hand gradients.

        With ``penalties_only`` the value (and gradient) is just the
        collision plus hand-hand part; the wrench and contact terms are
        reported as nan.
        """
        kin, obj, w = self.kin, self.obj, self.w
        fks = [kin.forward(h.wrist, h.q, check=False) for h in hands]
        m = obj.com

        pos = [fk.contact_pos[c] for fk, c in zip(fks, self.contacts)]
        frames = [fk.contact_frame[c] for fk, c in zip(fks, self.contacts)]
        P = np.concatenate(pos)
        if penalties_only:
            fit, e_w, e_con, dist = None, np.nan, np.nan, None
        else:
            O = np.concatenate(frames)
            G = [grasp_map(p, o, m) for p, o in zip(P, O)]
            fit = inner_force_fit(G, self.basis, self.mu, reg=w.force_reg, warm=self._warm)
            self._warm = fit.alphas
            e_w = w.wrench * (fit.residual + fit.regularization)
            cp, dist = closest_points_on_mesh(P, obj.mesh)
            e_con = w.contact * float(dist @ dist)

        centers = [fk.sphere_center for fk in fks]
        radii = [fk.sphere_radius for fk in fks]
        C = np.concatenate(centers)
        Rr = np.concatenate(radii)
        sd, sd_grad = obj.hull.signed_distance(C, return_gradient=True, exact_below=self.r_max)
        pen = np.maximum(Rr - sd, 0.0)
        e_coll = w.collision * float(pen @ pen)

        e_hh = 0.0
        g_hh = [np.zeros_like(c) for c in centers]
        for a in range(len(hands)):
            for b in range(a + 1, len(hands)):
                d = centers[a][:, None, :] - centers[b][None, :, :]
                n = np.linalg.norm(d, axis=-1)
                ov = np.maximum(radii[a][:, None] + radii[b][None, :] - n, 0.0)
                e_hh += w.hand_hand * float((ov ** 2).sum())
                if gradient and ov.any():
                    u = d / np.maximum(n, 1e-12)[..., None]
                    g = -2.0 * w.hand_hand * ov[..., None] * u
                    g_hh[a] += g.sum(axis=1)
                    g_hh[b] -= g.sum(axis=0)

        terms = {"wrench": e_w, "contact": e_con, "collision": e_coll, "hand_hand": e_hh}
        value = e_coll + e_hh if penalties_only else e_w + e_con + e_coll + e_hh
        penetration = float(np.maximum(-(sd - Rr), 0.0).max(initial=0.0))
        ev = Evaluation(value, terms, fit, [], dist, penetration)
        if not gradient:
            return ev

        if penalties_only:
            g_contact_p = gw_w = np.zeros_like(P)
        else:
            # wrench term, d/d(contact position) and d/d(contact frame rotation)
            J, nC = len(fit.residuals), len(P)
            alpha = fit.alphas.reshape(J, nC, -1)
            F = fit.edge_dirs                                          # (C, E, 3)
            Bf = np.einsum("jce,jk->cek", alpha, fit.residuals[:, :3])
            Bt = np.einsum("jce,jk->cek", alpha, fit.residuals[:, 3:])
            lever = (P - m)[:, None, :]
            gp_w = -2.0 * w.wrench * np.cross(F, Bt).sum(axis=1)
            gw_w = -2.0 * w.wrench * np.cross(F, Bf + np.cross(Bt, lever)).sum(axis=1)
            g_contact_p = gp_w + 2.0 * w.contact * (P - cp)

        g_sphere = (-2.0 * w.collision * pen)[:, None] * sd_grad

        k0 = s0 = 0
        for h, fk in enumerate(fks):
            nc, ns = len(self.contacts[h]), len(centers[h])
            links = np.concatenate([kin.contact_link[self.contacts[h]], kin.sphere_link])
            pts = np.concatenate([pos[h], centers[h]])
            gp = np.concatenate([g_contact_p[k0:k0 + nc], g_sphere[s0:s0 + ns] + g_hh[h]])
            gw = np.concatenate([gw_w[k0:k0 + nc], np.zeros((ns, 3))])
            ev.grads.append(kin.chain_gradient(fk, links, pts, gp, gw))
            k0 += nc
            s0 += ns
        return ev


def _flat_gradient(grads, L):
    """Gradient in scaled coordinates (meters for translation, L * radians otherwise)."""
    return np.concatenate([np.concatenate([gt, gw / L, gq / L]) for gt, gw, gq in grads])


def _step(hands, d, L, lower, upper):
    """Apply a scaled-coordinate displacement; returns new hands and the actual displacement."""
    out, actual = [], []
    k = 0
    for h in hands:
        nq = len(h.q)
        dt, dw, dq = d[k:k + 3], d[k + 3:k + 6] / L, d[k + 6:k + 6 + nq] / L
        k += 6 + nq
        wrist = Pose(quat_mul(quat_from_rotvec(dw), h.wrist.rotation), h.wrist.translation + dt)
        q = np.clip(h.q + dq, lower, upper)
        out.append(HandState(h.side, wrist, q))
        actual.append(np.concatenate([dt, d[k - 6 - nq + 3:k - nq], (q - h.q) * L]))
    return out, np.concatenate(actual)


def _lbfgs_direction(g, memory):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if memory:
        s, y, _ = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _descend(problem, hands, settings, lo, hi, penalties_only=False, stop=None):
    """L-BFGS / Armijo descent; returns (hands, evaluation, accepted values, accepted terms)."""
    L = settings.length_scale
    ev = problem.evaluate(hands, penalties_only=penalties_only)
    g = _flat_gradient(ev.grads, L)
    history, term_history = [ev.value], [dict(ev.terms)]
    memory = []
    s = settings.step0
    for it in range(settings.max_iter):
        if stop is not None and stop(ev):
            break
        if memory:
            d = _lbfgs_direction(g, memory)
            if d @ g >= 0.0:
                memory.clear()
        if not memory:
            d = -g
            t = s
        else:
            t = 1.0
        norm = np.linalg.norm(d) * t
        if norm > settings.max_displacement:
            t *= settings.max_displacement / norm
        accepted = False
        for _ in range(settings.max_backtracks):
            new, disp = _step(hands, t * d, L, lo, hi)
            lin = g @ disp
            if lin >= 0.0:
                break
            ev_new = problem.evaluate(new, penalties_only=penalties_only)
            if ev_new.value <= ev.value + settings.armijo * lin:
                accepted = True
                break
            t *= settings.shrink
        if not accepted:
            if memory:
                memory.clear()
                continue
            break
        g_new = _flat_gradient(ev_new.grads, L)
        y = g_new - g
        sy = disp @ y
        if sy > 1e-12 * np.linalg.norm(disp) * np.linalg.norm(y):
            memory.append((disp, y, 1.0 / sy))
            if len(memory) > settings.memory:
                memory.pop(0)
        s = min(t * settings.grow, 1.0)
        change = (ev.value - ev_new.value) / max(ev.value, 1e-12)
        hands, ev, g = new, ev_new, g_new
        history.append(ev.value)
        term_history.append(dict(ev.terms))
        if change < settings.rel_tol:
            break
    return hands, ev, history, term_history


def optimize_grasp(seed: GraspCandidate, obj: GraspObject, kin: Kinematics, basis: WrenchBasis = None,
                   mu: float = DEFAULT_MU, weights: GraspWeights = GraspWeights(),
                   settings: OptimizerSettings = OptimizerSettings(), raise_on_fail=True) -> GraspCandidate:
    """Descend the grasp objective from ``seed``; contacts are ``seed.contacts``.

    Search directions are limited-memory BFGS in length-scaled coordinates
    (plain steepest descent on the first step and after any reset); every
    step passes an Armijo backtracking test on the true objective, so the
    accepted values in ``history`` never increase.

    A seed that starts interpenetrating (object or other hand) is first
    restored: the same descent runs on the collision and hand-hand
    penalties alone until they drop below ``settings.restore_below``
    (unweighted). Those steps are kept in ``restore_history``.

    NoConverge is raised when the final state misses any of the objective /
    residual / contact / penetration thresholds (unless ``raise_on_fail`` is
    False).
    """
    problem = GraspProblem(kin, obj, seed.contacts, basis, mu, weights)
    for h in seed.hands:
        if not (np.all(np.isfinite(h.q)) and np.all(np.isfinite(h.wrist.translation))):
            raise ValueError("seed pose is not finite")
    lo, hi = kin.lower, kin.upper
    hands = [h.moved(q=np.clip(h.q, lo, hi)) for h in seed.hands]

    def raw_penalty(ev):
        return ev.terms["collision"] / weights.collision + ev.terms["hand_hand"] / weights.hand_hand

    restore = []
    if raw_penalty(problem.evaluate(hands, gradient=False, penalties_only=True)) > settings.restore_below:
        hands, _, _, terms = _descend(problem, hands, settings, lo, hi, penalties_only=True,
                                      stop=lambda e: raw_penalty(e) <= settings.restore_below)
        restore = terms
    hands, ev, history, term_history = _descend(problem, hands, settings, lo, hi)

    fit = ev.fit
    cand = GraspCandidate(
        hands=tuple(hands), contacts=seed.contacts, forces=fit.forces, objective=ev.value,
        residual=fit.residual, worst_direction=fit.worst_direction,
        terms=dict(ev.terms, contact_distance=float(ev.contact_dist.max()), penetration=ev.penetration),
        history=history, term_history=term_history, restore_history=restore, seed_index=seed.seed_index)
    ok = (ev.value <= settings.objective_max and fit.residual < settings.residual_max
          and ev.contact_dist.max() < settings.contact_max and ev.penetration <= settings.penetration_max)
    log.debug("grasp seed %d: %d iters, objective %.3g, residual %.3g, contact %.2g m, penetration %.2g m",
              seed.seed_index, len(history) - 1, ev.value, fit.residual, ev.contact_dist.max(), ev.penetration)
    if not ok and raise_on_fail:
        err = NoConverge(f"seed {seed.seed_index}: objective {ev.value:.4g}, residual {fit.residual:.4g}, "
                         f"contact {ev.contact_dist.max():.4g} m, penetration {ev.penetration:.4g} m",
                         ev.value)
        err.candidate = cand
        raise err
    return cand


# --------------------------------------------------------------------------
# seeds


def _orthonormal_from_z(z, rng):
    z = z / np.linalg.norm(z)
    a = rng.normal(size=3)
    a -= (a @ z) * z
    while np.linalg.norm(a) < 1e-6:
        a = rng.normal(size=3)
        a -= (a @ z) * z
    x = a / np.linalg.norm(a)
    return np.c_[x, np.cross(z, x), z]


def _surface_point(hull, rng):
    tri = hull.mesh.triangles
    area = hull.mesh.face_areas()
    f = rng.choice(len(tri), p=area / area.sum())
    r1, r2 = rng.uniform(size=2)
    s = np.sqrt(r1)
    p = (1 - s) * tri[f, 0] + s * (1 - r2) * tri[f, 1] + s * r2 * tri[f, 2]
    return p, hull.normals[f]


def _seed_hand(side, point, inward, kin, rng, standoff, flexion):
    R = _orthonormal_from_z(inward, rng)
    f = rng.uniform(*flexion)
    q = np.clip(f * kin.upper, kin.lower, kin.upper)
    q[np.isclose(kin.lower, -kin.upper)] = 0.0          # symmetric joints (abduction) start centred
    return HandState(side, Pose.from_rt(R, point - standoff * inward), q)


def init_candidates(hull, strategy: str, count: int, rng: np.random.Generator, kin: Kinematics,
                    contacts=None, standoff: float = 0.06, flexion=(0.35, 0.55),
                    sides=("right", "left")) -> list:
    """Seeds with palms facing the object.

    unimanual: one hull surface point per seed, palm +z along the inward
    normal, random roll about it. bimanual: a random line through the hull
    center, one hand at each exit point.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if contacts is None:
        contacts = tuple(range(len(kin.contact_link)))
    contacts = tuple(int(c) for c in contacts)
    seeds = []
    for i in range(count):
        if strategy == "unimanual":
            p, n_out = _surface_point(hull, rng)
            hands = (_seed_hand(sides[0], p, -n_out, kin, rng, standoff, flexion),)
            cset = (contacts,)
        elif strategy == "bimanual":
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            c = hull.center
            p1, p2 = hull.ray_exit(c, u), hull.ray_exit(c, -u)
            hands = (_seed_hand(sides[0], p1, -u, kin, rng, standoff, flexion),
                     _seed_hand(sides[1], p2, u, kin, rng, standoff, flexion))
            cset = (contacts, contacts)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        seeds.append(GraspCandidate(hands=hands, contacts=cset, seed_index=i))
    return seeds
