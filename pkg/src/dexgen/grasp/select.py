"""Contact restriction, human-consistency ranking and stability-gated selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from ..errors import EmbodimentMismatch, InvalidFingerCount, NoConverge, NoStableGrasp
from ..geom import ConvexBody, Pose, TriMesh, rotation_geodesic_angle
from .candidate import GraspCandidate, GraspObject
from .forces import DEFAULT_MU, WrenchBasis
from .kinematics import Kinematics
from .optimize import GraspWeights, OptimizerSettings, init_candidates, optimize_grasp

log = logging.getLogger(__name__)

THUMB = "thumb"


def restrict_contacts(hand, finger_count: int) -> tuple:
    """Contact indices covering exactly ``finger_count`` fingers.

    ``hand`` is a HandModelSpec (or anything with ``contacts``). Fingers are
    taken in model order with the thumb first whenever two or more are
    requested; a single finger is the first non-thumb finger.
    """
    contacts = list(getattr(hand, "contacts", hand))
    fingers = []
    for c in contacts:
        if c.finger not in fingers:
            fingers.append(c.finger)
    if not isinstance(finger_count, (int, np.integer)) or not 1 <= finger_count <= len(fingers):
        raise InvalidFingerCount(f"finger count {finger_count} not in [1, {len(fingers)}]")
    others = [f for f in fingers if f != THUMB]
    if THUMB in fingers and finger_count >= 2:
        chosen = [THUMB] + others[:finger_count - 1]
    else:
        chosen = (others or fingers)[:finger_count]
    return tuple(i for i, c in enumerate(contacts) if c.finger in chosen)


def _pose_map(p) -> dict:
    if isinstance(p, GraspCandidate):
        return {h.side: h.wrist for h in p.hands}
    if isinstance(p, dict):
        return dict(p)
    return {h.side: h.wrist for h in p}


def candidate_distance(g, p, lambda_t: float = 1.0, lambda_r: float = 0.3) -> float:
    """sum over hands of lambda_t * |dt| + lambda_r * geodesic angle."""
    a, b = _pose_map(g), _pose_map(p)
    if set(a) != set(b):
        raise EmbodimentMismatch(f"candidate covers {sorted(a)}, reference covers {sorted(b)}")
    total = 0.0
    for side in sorted(a):
        pa, pb = a[side], b[side]
        total += lambda_t * float(np.linalg.norm(pa.translation - pb.translation))
        total += lambda_r * rotation_geodesic_angle(pa, pb)
    return total


def rank_candidates(candidates, human, lambda_t: float = 1.0, lambda_r: float = 0.3) -> list:
    """Ascending by distance to the human hand poses; ties keep input order."""
    if not candidates:
        raise ValueError("no candidates to rank")
    keys = [candidate_distance(c, human, lambda_t, lambda_r) for c in candidates]
    order = sorted(range(len(candidates)), key=lambda i: keys[i])
    return [candidates[i] for i in order]


def stability_error(points, planned: Pose, simulated_final: Pose, start: Pose) -> float:
    """Mean distance between object-frame points moved by the planned and simulated transforms."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        raise ValueError("need at least one point")
    t_sim = start.inverse() @ simulated_final
    diff = planned.apply(pts) - t_sim.apply(pts)
    return float(np.linalg.norm(diff, axis=1).mean())


class RolloutBackend(Protocol):
    def rollout(self, candidate: GraspCandidate, planned: Pose, start: Pose) -> Pose:
        """Final object pose after executing ``planned`` from ``start`` with the grasp."""


@dataclass
class SurrogateRollout:
    """Kinematic stand-in for a physics rollout.

    The object ends at the planned target perturbed, in its own frame, by
    exp(eta * xi) where xi is the candidate's least-resolved unit wrench
    direction (force part -> translation, torque part -> rotation vector)
    and eta = c_r * residual.
    """

    c_r: float = 0.1
    calls: int = 0

    def rollout(self, candidate: GraspCandidate, planned: Pose, start: Pose) -> Pose:
        self.calls += 1
        return surrogate_rollout(candidate, planned, start, self.c_r)


def surrogate_rollout(candidate: GraspCandidate, planned: Pose, start: Pose, c_r: float = 0.1) -> Pose:
    target = start @ planned
    if not np.isfinite(candidate.residual):
        raise ValueError("candidate has no fitted residual")
    eta = c_r * float(candidate.residual)
    if eta == 0.0:
        return target
    xi = np.asarray(candidate.worst_direction, dtype=float)
    return target @ Pose.from_rotvec(eta * xi[3:], eta * xi[:3])


def select_grasp(candidates, backend: RolloutBackend, eps: float, points, planned: Pose, start: Pose,
                 feasible: Callable = None) -> GraspCandidate:
    """First candidate (in the given order) whose stability error is below ``eps``.

    Evaluation stops at the first success. ``feasible`` may veto a candidate
    before rollout (its error is then recorded as inf).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    errors = []
    for c in candidates:
        if feasible is not None and not feasible(c):
            errors.append(float("inf"))
            continue
        final = backend.rollout(c, planned, start)
        err = stability_error(points, planned, final, start)
        errors.append(err)
        if err < eps:
            c.terms["stability_error"] = err
            return c
    raise NoStableGrasp(errors)


# --------------------------------------------------------------------------
# end-to-end synthesis for one grasp subaction


@dataclass
class GraspConfig:
    seeds: int = 16
    standoff: float = 0.06
    flexion: tuple = (0.35, 0.55)
    mu: float = DEFAULT_MU
    wrench_scale: float = 1.0
    weights: GraspWeights = field(default_factory=GraspWeights)
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)
    lambda_t: float = 1.0
    lambda_r: float = 0.3
    eps: float = 0.02
    c_r: float = 0.1
    reach_radius: float = 1.0
    stability_points: int = 256


@dataclass
class GraspPlan:
    candidate: GraspCandidate          # object frame
    tried: int                          # optimizer runs
    converged: int                      # candidates surviving NoConverge
    evaluations: int                    # stability rollouts


def plan_grasp(mesh: TriMesh, kin: Kinematics, sides, finger_count: int, human_wrists: dict,
               start: Pose, planned: Pose, rng: np.random.Generator, config: GraspConfig = GraspConfig(),
               backend: RolloutBackend = None, hull: ConvexBody = None) -> GraspPlan:
    """Synthesize, rank and select a grasp on ``mesh`` (object frame).

    ``human_wrists`` maps side -> reconstructed wrist pose in the object frame;
    ``start`` is the object pose at grasp time and ``planned`` the relative
    transform to the end of transport, both used by the stability check and
    the reach test (wrists must stay within ``reach_radius`` of the world
    origin at both ends).
    """
    sides = tuple(sides)
    obj = GraspObject(mesh, hull=hull)
    contacts = restrict_contacts(kin.hand, finger_count)
    strategy = "unimanual" if len(sides) == 1 else "bimanual"
    seeds = init_candidates(obj.hull, strategy, config.seeds, rng, kin, contacts=contacts,
                            standoff=config.standoff, flexion=config.flexion,
                            sides=sides if len(sides) > 1 else (sides[0], sides[0]))
    basis = WrenchBasis.force_axes(config.wrench_scale)
    good = []
    for s in seeds:
        try:
            good.append(optimize_grasp(s, obj, kin, basis, config.mu, config.weights, config.settings))
        except NoConverge as exc:
            log.debug("%s", exc)
    if not good:
        raise NoStableGrasp([], f"no grasp candidate converged out of {len(seeds)} seeds")
    ranked = rank_candidates(good, human_wrists, config.lambda_t, config.lambda_r)

    end = start @ planned

    def reachable(c):
        for h in c.hands:
            for p in (start, end):
                if np.linalg.norm((p @ h.wrist).translation) > config.reach_radius:
                    return False
        return True

    points = mesh.sample_surface(config.stability_points, rng).points
    backend = backend if backend is not None else SurrogateRollout(config.c_r)
    counter = _CountingBackend(backend)
    try:
        chosen = select_grasp(ranked, counter, config.eps, points, planned, start, feasible=reachable)
    except NoStableGrasp as exc:
        raise NoStableGrasp(exc.errors, f"no stable grasp among {len(ranked)} candidates "
                            f"(errors {np.round(exc.errors, 4).tolist()})") from None
    return GraspPlan(chosen, len(seeds), len(good), counter.calls)


@dataclass
class _CountingBackend:
    inner: RolloutBackend
    calls: int = 0

    def rollout(self, candidate, planned, start):
        self.calls += 1
        return self.inner.rollout(candidate, planned, start)
