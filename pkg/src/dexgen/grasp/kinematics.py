"""Forward kinematics for tree-structured hands, with the first-order terms
needed to chain world-space gradients back to wrist and joint coordinates."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..errors import JointLimit
from ..geom import Pose, rotation_about
from ..ingest.hand_model import HandModelSpec, hand_model_from_dict

LIMIT_TOL = 1e-9


def contact_frame(normal) -> np.ndarray:
    """Right-handed frame whose third column is ``normal``; fixed tangent choice."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.c_[t1, t2, n]


@dataclass
class FKResult:
    wrist: Pose
    link_R: np.ndarray          # (L, 3, 3)
    link_t: np.ndarray          # (L, 3)
    joint_axis: np.ndarray      # (J, 3) world
    joint_origin: np.ndarray    # (J, 3) world
    contact_pos: np.ndarray     # (C, 3)
    contact_frame: np.ndarray   # (C, 3, 3), column 2 = inward normal
    sphere_center: np.ndarray   # (S, 3)
    sphere_radius: np.ndarray   # (S,)

    def link_pose(self, i) -> Pose:
        return Pose.from_rt(self.link_R[i], self.link_t[i])

    @property
    def contact_normal(self) -> np.ndarray:
        return self.contact_frame[:, :, 2]


class Kinematics:
    """Precomputed index tables for one hand model."""

    def __init__(self, hand: HandModelSpec):
        self.hand = hand
        L, J = len(hand.links), hand.n_joints
        self.n_links, self.n_joints = L, J
        self.ancestors = np.zeros((L, J), dtype=bool)
        for name, chain in hand.chain.items():
            self.ancestors[hand.link_index[name], chain] = True
        self.joint_child = np.array([hand.link_index[j.child] for j in hand.joints])
        self.joint_parent = np.array([hand.link_index[j.parent] for j in hand.joints])
        self.origin_R = np.array([j.origin.R for j in hand.joints]).reshape(J, 3, 3)
        self.origin_t = np.array([j.origin.translation for j in hand.joints]).reshape(J, 3)
        self.axes = np.array([j.axis / np.linalg.norm(j.axis) for j in hand.joints]).reshape(J, 3)
        self.contact_link = np.array([hand.link_index[c.link] for c in hand.contacts], dtype=np.int64)
        self.contact_local = np.array([c.position for c in hand.contacts]).reshape(-1, 3)
        self.contact_local_frame = np.array([contact_frame(c.normal) for c in hand.contacts]).reshape(-1, 3, 3)
        self.contact_finger = [c.finger for c in hand.contacts]
        sl, sc, sr = [], [], []
        for i, link in enumerate(hand.links):
            for s in link.spheres:
                sl.append(i)
                sc.append(s[:3])
                sr.append(s[3])
        self.sphere_link = np.array(sl, dtype=np.int64)
        self.sphere_local = np.array(sc).reshape(-1, 3)
        self.sphere_radius = np.array(sr, dtype=float)
        self.lower, self.upper = hand.lower, hand.upper

    def check_limits(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(self.n_joints)
        bad = np.flatnonzero((q < self.lower - LIMIT_TOL) | (q > self.upper + LIMIT_TOL))
        if len(bad):
            k = bad[0]
            raise JointLimit(f"joint {self.hand.joints[k].name} = {q[k]:.6f} outside "
                             f"[{self.lower[k]:.6f}, {self.upper[k]:.6f}]")
        return q

    def forward(self, wrist: Pose, q, check=True) -> FKResult:
        q = self.check_limits(q) if check else np.asarray(q, dtype=float)
        R = np.empty((self.n_links, 3, 3))
        t = np.empty((self.n_links, 3))
        root = self.hand.link_index[self.hand.root]
        R[root], t[root] = wrist.R, wrist.translation
        axis_w = np.empty((self.n_joints, 3))
        origin_w = np.empty((self.n_joints, 3))
        for k in self.hand.topo_order:
            p, c = self.joint_parent[k], self.joint_child[k]
            Rj = R[p] @ self.origin_R[k]
            origin_w[k] = R[p] @ self.origin_t[k] + t[p]
            R[c] = Rj @ rotation_about(self.axes[k], q[k])
            t[c] = origin_w[k]
            axis_w[k] = Rj @ self.axes[k]
        cl = self.contact_link
        cpos = np.einsum("cij,cj->ci", R[cl], self.contact_local) + t[cl]
        cfr = R[cl] @ self.contact_local_frame
        sl = self.sphere_link
        spos = np.einsum("sij,sj->si", R[sl], self.sphere_local) + t[sl]
        return FKResult(wrist, R, t, axis_w, origin_w, cpos, cfr, spos, self.sphere_radius.copy())

    def chain_gradient(self, fk: FKResult, links, points, g_p, g_w=None):
        """Pull world-space gradients at attached points back to (t, w, q).

        ``g_p`` is d f / d point (P, 3); ``g_w`` is d f / d (small rotation of
        the point's link) (P, 3). The wrist rotation increment is applied on
        the left, about the wrist position.
        """
        g_p = np.asarray(g_p, dtype=float).reshape(-1, 3)
        if g_w is None:
            g_w = np.zeros_like(g_p)
        wt = fk.wrist.translation
        grad_t = g_p.sum(axis=0)
        grad_w = np.cross(points - wt, g_p).sum(axis=0) + g_w.sum(axis=0)
        anc = self.ancestors[links]                                   # (P, J)
        lever = points[:, None, :] - fk.joint_origin[None, :, :]     # (P, J, 3)
        moment = np.cross(lever, g_p[:, None, :]) + g_w[:, None, :]
        grad_q = np.einsum("pj,pjk,jk->j", anc, moment, fk.joint_axis)
        return grad_t, grad_w, grad_q


def forward_kinematics(hand, wrist: Pose, q) -> FKResult:
    kin = hand if isinstance(hand, Kinematics) else Kinematics(hand)
    return kin.forward(wrist, q)


def load_reference_hand() -> HandModelSpec:
    """The small three-digit test hand shipped with the package."""
    text = resources.files("dexgen.data").joinpath("reference_hand.json").read_text(encoding="utf-8")
    return hand_model_from_dict(json.loads(text))
