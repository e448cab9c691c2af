"""Grasp synthesis: kinematics, force fitting, optimization and selection."""

from .candidate import GraspCandidate, GraspObject, HandState
from .forces import (
    DEFAULT_MU,
    ForceFit,
    WrenchBasis,
    friction_edges,
    grasp_map,
    in_friction_pyramid,
    inner_force_fit,
    nnls_active_set,
    nnls_gram,
    nnls_projected_gradient,
)
from .kinematics import FKResult, Kinematics, contact_frame, forward_kinematics, load_reference_hand
from .optimize import GraspProblem, GraspWeights, OptimizerSettings, init_candidates, optimize_grasp
from .select import (
    GraspConfig,
    GraspPlan,
    RolloutBackend,
    SurrogateRollout,
    candidate_distance,
    plan_grasp,
    rank_candidates,
    restrict_contacts,
    select_grasp,
    stability_error,
    surrogate_rollout,
)

__all__ = [
    "DEFAULT_MU", "FKResult", "ForceFit", "GraspCandidate", "GraspConfig", "GraspObject", "GraspPlan",
    "GraspProblem", "GraspWeights", "HandState", "Kinematics", "OptimizerSettings", "RolloutBackend",
    "SurrogateRollout", "WrenchBasis", "candidate_distance", "contact_frame", "forward_kinematics",
    "friction_edges", "grasp_map", "in_friction_pyramid", "init_candidates", "inner_force_fit",
    "load_reference_hand", "nnls_active_set", "nnls_gram", "nnls_projected_gradient", "optimize_grasp",
    "plan_grasp", "rank_candidates", "restrict_contacts", "select_grasp", "stability_error",
    "surrogate_rollout",
]
