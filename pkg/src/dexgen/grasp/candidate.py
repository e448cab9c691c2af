"""Grasp candidate containers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..geom import ConvexBody, Pose, TriMesh


@dataclass(frozen=True)
class HandState:
    side: str             # "right" / "left", also the embodiment label
    wrist: Pose
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).copy())

    def moved(self, wrist=None, q=None) -> "HandState":
        return HandState(self.side, self.wrist if wrist is None else wrist,
                         self.q if q is None else q)

    def transformed(self, pose: Pose) -> "HandState":
        return HandState(self.side, pose @ self.wrist, self.q)


@dataclass
class GraspCandidate:
    hands: tuple                  # HandState per embodiment
    contacts: tuple               # per hand: tuple of contact indices into the hand model
    forces: np.ndarray = None     # (J, C, 3) fitted contact forces, object frame
    objective: float = np.inf
    residual: float = np.inf      # summed squared wrench residual
    worst_direction: np.ndarray = field(default_factory=lambda: np.zeros(6))
    terms: dict = field(default_factory=dict)
    history: list = field(default_factory=list)          # accepted objective values
    term_history: list = field(default_factory=list)     # per-term breakdown of the same steps
    restore_history: list = field(default_factory=list)  # terms during penetration recovery, if any
    seed_index: int = -1

    @property
    def embodiments(self) -> tuple:
        return tuple(h.side for h in self.hands)

    def hand(self, side) -> HandState:
        for h in self.hands:
            if h.side == side:
                return h
        raise KeyError(side)

    def with_hands(self, hands) -> "GraspCandidate":
        return replace(self, hands=tuple(hands))

    def transformed(self, pose: Pose) -> "GraspCandidate":
        """Same grasp with every wrist mapped through ``pose``."""
        return replace(self, hands=tuple(h.transformed(pose) for h in self.hands))

    def summary(self) -> dict:
        return {
            "embodiments": list(self.embodiments),
            "contacts": [list(map(int, c)) for c in self.contacts],
            "objective": float(self.objective),
            "residual": float(self.residual),
            "terms": {k: float(v) for k, v in self.terms.items()},
            "seed": int(self.seed_index),
        }


class GraspObject:
    """Object geometry as seen by the grasp optimizer (object frame)."""

    def __init__(self, mesh: TriMesh, com=None, hull: ConvexBody = None):
        self.mesh = mesh
        self.hull = hull if hull is not None else ConvexBody(mesh)
        self.com = np.asarray(mesh.volume_centroid() if com is None else com, dtype=float)

    @property
    def center(self) -> np.ndarray:
        return self.com
