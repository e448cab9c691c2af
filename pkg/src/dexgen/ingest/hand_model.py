"""Articulated hand description: links with collision spheres, revolute joints,
and candidate contact points on the finger pads.

JSON schema::

    {"name": str, "root": "palm",
     "links":  [{"name": str, "spheres": [[cx, cy, cz, r], ...]}],
     "joints": [{"name", "parent", "child", "origin": [qw,qx,qy,qz,tx,ty,tz],
                 "axis": [x,y,z], "lower": rad, "upper": rad}],
     "contacts": [{"link", "finger", "position": [x,y,z], "normal": [x,y,z]}],
     "open_pose": {joint_name: rad}  (optional, defaults to clamp(0))}

A joint's origin places its child frame in the parent frame at q = 0; the
joint rotates the child about ``axis`` (child frame coordinates).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvariantViolation, MissingAsset
from ..geom import Pose


@dataclass(frozen=True)
class Link:
    name: str
    spheres: np.ndarray   # (k, 4): center xyz + radius


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str
    child: str
    origin: Pose
    axis: np.ndarray
    lower: float
    upper: float


@dataclass(frozen=True)
class ContactPoint:
    link: str
    finger: str
    position: np.ndarray
    normal: np.ndarray


class HandModelSpec:
    def __init__(self, links, joints, contacts, root="palm", name="hand", open_pose=None):
        self.name = name
        self.root = root
        self.links = list(links)
        self.joints = list(joints)
        self.contacts = list(contacts)
        self._validate()
        self.link_index = {l.name: i for i, l in enumerate(self.links)}
        self.joint_index = {j.name: i for i, j in enumerate(self.joints)}
        self.lower = np.array([j.lower for j in self.joints])
        self.upper = np.array([j.upper for j in self.joints])
        # joints ordered so parents come before children
        child_joint = {j.child: k for k, j in enumerate(self.joints)}
        order, stack = [], [root]
        while stack:
            link = stack.pop()
            kids = [k for k, j in enumerate(self.joints) if j.parent == link]
            order.extend(kids)
            stack.extend(self.joints[k].child for k in reversed(kids))
        self.topo_order = order
        self.child_joint = child_joint
        # chain of joint indices from root to each link
        self.chain = {}
        for l in self.links:
            chain, cur = [], l.name
            while cur in child_joint:
                k = child_joint[cur]
                chain.append(k)
                cur = self.joints[k].parent
            self.chain[l.name] = chain[::-1]
        q0 = np.clip(np.zeros(len(self.joints)), self.lower, self.upper)
        if open_pose:
            for jn, v in open_pose.items():
                if jn not in self.joint_index:
                    raise FormatError(f"unknown joint {jn!r}", "open_pose")
                q0[self.joint_index[jn]] = float(v)
        if np.any(q0 < self.lower) or np.any(q0 > self.upper):
            raise InvariantViolation("open pose violates joint limits")
        self.q_open = q0

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def fingers(self) -> list:
        out = []
        for c in self.contacts:
            if c.finger not in out:
                out.append(c.finger)
        return out

    def _validate(self):
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise InvariantViolation("duplicate link names")
        if self.root not in names:
            raise InvariantViolation(f"root link {self.root!r} missing")
        jnames = [j.name for j in self.joints]
        if len(set(jnames)) != len(jnames):
            raise InvariantViolation("duplicate joint names")
        children = [j.child for j in self.joints]
        if len(set(children)) != len(children):
            raise InvariantViolation("a link has more than one parent joint")
        if self.root in children:
            raise InvariantViolation("root link cannot be a joint child")
        for j in self.joints:
            if j.parent not in names or j.child not in names:
                raise InvariantViolation(f"joint {j.name} references unknown links")
            if not j.lower < j.upper:
                raise InvariantViolation(f"joint {j.name}: lower {j.lower} >= upper {j.upper}")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-6:
                raise InvariantViolation(f"joint {j.name}: axis not unit length")
        # every link reachable from the root => tree (n-1 edges, single parents)
        reach, stack = {self.root}, [self.root]
        while stack:
            cur = stack.pop()
            for j in self.joints:
                if j.parent == cur and j.child not in reach:
                    reach.add(j.child)
                    stack.append(j.child)
        if reach != set(names):
            raise InvariantViolation(f"links not connected to root: {sorted(set(names) - reach)}")
        for c in self.contacts:
            if c.link not in names:
                raise InvariantViolation(f"contact on unknown link {c.link}")
            if abs(np.linalg.norm(c.normal) - 1.0) > 1e-6:
                raise InvariantViolation(f"contact normal on {c.link} is not unit length")
        for l in self.links:
            if len(l.spheres) and np.any(l.spheres[:, 3] <= 0):
                raise InvariantViolation(f"link {l.name} has a non-positive sphere radius")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "root": self.root,
            "links": [{"name": l.name, "spheres": l.spheres.tolist()} for l in self.links],
            "joints": [{"name": j.name, "parent": j.parent, "child": j.child,
                        "origin": j.origin.as_array().tolist(), "axis": j.axis.tolist(),
                        "lower": j.lower, "upper": j.upper} for j in self.joints],
            "contacts": [{"link": c.link, "finger": c.finger, "position": c.position.tolist(),
                          "normal": c.normal.tolist()} for c in self.contacts],
            "open_pose": {j.name: float(v) for j, v in zip(self.joints, self.q_open)},
        }


def _vec(v, n, where):
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise FormatError("expected numbers", where) from None
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise FormatError(f"expected {n} finite numbers", where)
    return a


def _field(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise FormatError("missing required field", f"{where}.{key}")
    return d[key]


def hand_model_from_dict(d: dict) -> HandModelSpec:
    links = []
    for i, l in enumerate(_field(d, "links", "hand")):
        where = f"hand.links[{i}]"
        sph = np.array(l.get("spheres", []), dtype=float).reshape(-1, 4)
        links.append(Link(str(_field(l, "name", where)), sph))
    joints = []
    for i, j in enumerate(_field(d, "joints", "hand")):
        where = f"hand.joints[{i}]"
        origin = _vec(j.get("origin", [1, 0, 0, 0, 0, 0, 0]), 7, f"{where}.origin")
        joints.append(Joint(
            name=str(_field(j, "name", where)),
            parent=str(_field(j, "parent", where)),
            child=str(_field(j, "child", where)),
            origin=Pose.from_array(origin),
            axis=_vec(_field(j, "axis", where), 3, f"{where}.axis"),
            lower=float(_field(j, "lower", where)),
            upper=float(_field(j, "upper", where)),
        ))
    contacts = []
    for i, c in enumerate(d.get("contacts", [])):
        where = f"hand.contacts[{i}]"
        contacts.append(ContactPoint(
            link=str(_field(c, "link", where)),
            finger=str(_field(c, "finger", where)),
            position=_vec(_field(c, "position", where), 3, f"{where}.position"),
            normal=_vec(_field(c, "normal", where), 3, f"{where}.normal"),
        ))
    return HandModelSpec(links, joints, contacts, root=d.get("root", "palm"),
                         name=d.get("name", "hand"), open_pose=d.get("open_pose"))


def load_hand_model(path) -> HandModelSpec:
    p = Path(path)
    if not p.is_file():
        raise MissingAsset(f"hand model not found: {p}")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"not valid JSON: {exc}", str(p)) from None
    return hand_model_from_dict(d)


def write_hand_model(hand: HandModelSpec, path) -> None:
    Path(path).write_text(json.dumps(hand.to_dict(), indent=1) + "\n", encoding="utf-8")
