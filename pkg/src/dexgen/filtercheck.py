"""Automated filtering of generated demonstrations.

The default judge is a set of geometric and kinematic rules. An external
judge (any command that reads a JSON summary on stdin and prints PASS or
FAIL) can be plugged in as a second step; when it is missing or misbehaves
the rule verdict stands.
"""

from __future__ import annotations

import json
import math
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import JudgeUnavailable
from .geom import ConvexBody, Pose, rotation_geodesic_angle
from .record import KIND_NAMES, DemoRecord

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"


@dataclass(frozen=True)
class FilterTolerances:
    translation: float = 0.02              # m, final object pose
    rotation: float = math.radians(15.0)   # rad, final object pose
    penetration: float = 0.002             # m, object-object overlap
    joint_slack: float = 1e-9


@dataclass
class Check:
    name: str
    passed: bool
    evidence: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "evidence": float(self.evidence),
                "detail": self.detail}


@dataclass
class FilterReport:
    record_id: str
    checks: list = field(default_factory=list)
    judge: str = "not-configured"          # pass / fail / skipped / not-configured

    @property
    def verdict(self) -> str:
        ok = all(c.passed for c in self.checks) and self.judge != FAIL
        return PASS if ok else FAIL

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def check(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"record_id": self.record_id, "verdict": self.verdict, "judge": self.judge,
                "checks": [c.to_dict() for c in self.checks]}


# --------------------------------------------------------------------------
# rules


def _final_pose_check(record: DemoRecord, targets, tol: FilterTolerances) -> Check:
    T = record.horizon
    worst_t, worst_r, who = 0.0, 0.0, ""
    for o, oid in enumerate(record.object_ids):
        final = record.object_pose(o, T - 1)
        dt = float(np.linalg.norm(final.translation - targets[o].translation))
        dr = rotation_geodesic_angle(final, targets[o])
        if dt > worst_t or dr > worst_r:
            who = oid
        worst_t, worst_r = max(worst_t, dt), max(worst_r, dr)
    ok = worst_t <= tol.translation and worst_r <= tol.rotation
    return Check("final_pose", ok, worst_t,
                 f"max translation {worst_t:.4f} m, max rotation {math.degrees(worst_r):.2f} deg"
                 + (f" ({who})" if not ok else ""))


def _penetration_check(record: DemoRecord, tol: FilterTolerances) -> Check:
    O, T = len(record.object_ids), record.horizon
    if O < 2:
        return Check("object_penetration", True, 0.0, "single object")
    hulls = [ConvexBody(m) for m in record.object_meshes]
    radius = [float(np.linalg.norm(h.mesh.vertices - h.center, axis=1).max()) for h in hulls]
    worst, where = 0.0, ""
    for t in range(T):
        poses = [record.object_pose(o, t) for o in range(O)]
        centers = [p.apply(h.center) for p, h in zip(poses, hulls)]
        placed = {}
        for a in range(O):
            for b in range(a + 1, O):
                if np.linalg.norm(centers[a] - centers[b]) >= radius[a] + radius[b]:
                    continue
                for k in (a, b):
                    if k not in placed:
                        placed[k] = hulls[k].transformed(poses[k])
                d = placed[a].penetration_depth(placed[b])
                if d > worst:
                    worst, where = d, f"{record.object_ids[a]}/{record.object_ids[b]} at frame {t}"
    return Check("object_penetration", worst <= tol.penetration, worst,
                 f"max overlap {worst * 1e3:.2f} mm" + (f" ({where})" if where else ""))


def _gap_check(record: DemoRecord) -> Check:
    bad = 0
    for name in ("wrist", "joints", "grip", "object_poses"):
        a = getattr(record, name)
        bad += int(np.sum((~np.isfinite(a.reshape(a.shape[0], a.shape[1], -1))).any(axis=-1)))
    q = np.linalg.norm(record.wrist[..., :4], axis=-1)
    bad += int(np.sum(np.abs(q - 1.0) > 1e-6))
    kinds = set(np.unique(record.kind).tolist())
    if not kinds <= set(KIND_NAMES):
        bad += 1
    return Check("no_gaps", bad == 0, float(bad), f"{bad} undefined states")


def _joint_check(record: DemoRecord, tol: FilterTolerances) -> Check:
    lo, hi = record.joint_limits[:, 0], record.joint_limits[:, 1]
    over = np.maximum(record.joints - hi, lo - record.joints).max(initial=-np.inf)
    worst = float(max(over, 0.0))
    return Check("joint_limits", worst <= tol.joint_slack, worst, f"max violation {worst:.2e} rad")


def rule_filter(record: DemoRecord, bundle=None, tolerances: FilterTolerances = FilterTolerances()) -> FilterReport:
    """Run the four rule checks on ``record`` (which is never modified).

    Final poses are compared against the record's reconstructed targets, or,
    for a record generated straight from ``bundle`` (no augmentation), the
    bundle's last-frame poses.
    """
    if bundle is not None and not record.provenance.get("source"):
        last = bundle.frames[-1]
        targets = [last.object_poses[oid] for oid in record.object_ids]
    else:
        targets = [Pose.from_array(p) for p in record.target_poses]
    checks = [
        _final_pose_check(record, targets, tolerances),
        _penetration_check(record, tolerances),
        _gap_check(record),
        _joint_check(record, tolerances),
    ]
    return FilterReport(record.record_id, checks)


# --------------------------------------------------------------------------
# external judge


def judge_summary(record: DemoRecord, description: str = "") -> dict:
    """Compact JSON-able description of a record for an external judge."""
    T = record.horizon
    return {
        "record_id": record.record_id,
        "description": description,
        "frames": T,
        "embodiments": list(record.sides),
        "objects": [
            {"id": oid,
             "initial": record.object_poses[o, 0].round(6).tolist(),
             "final": record.object_poses[o, T - 1].round(6).tolist(),
             "target": record.target_poses[o].round(6).tolist()}
            for o, oid in enumerate(record.object_ids)],
        "segments": [[KIND_NAMES[int(k)] for k in row] for row in record.kind],
        "provenance": record.provenance,
    }


def external_judge_hook(record: DemoRecord, description: str = "", command=None, timeout: float = 30.0) -> str:
    """Ask an external command for a verdict.

    Returns "pass", "fail" or "not-configured" (no command). Raises
    JudgeUnavailable on timeout, a non-zero exit or a reply that is not a
    single PASS/FAIL line.
    """
    if not command:
        return "not-configured"
    payload = json.dumps(judge_summary(record, description), sort_keys=True)
    argv = command if isinstance(command, (list, tuple)) else ["/bin/sh", "-c", command]
    try:
        proc = subprocess.run(argv, input=payload, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise JudgeUnavailable(f"judge timed out after {timeout} s") from None
    except OSError as exc:
        raise JudgeUnavailable(f"judge could not start: {exc}") from None
    if proc.returncode != 0:
        raise JudgeUnavailable(f"judge exited with {proc.returncode}: {proc.stderr.strip()[:200]}")
    lines = [l.strip() for l in proc.stdout.strip().splitlines() if l.strip()]
    if len(lines) != 1 or lines[0].upper() not in ("PASS", "FAIL"):
        raise JudgeUnavailable(f"malformed judge reply: {proc.stdout[:200]!r}")
    return PASS if lines[0].upper() == "PASS" else FAIL


def apply_judge(report: FilterReport, record: DemoRecord, description="", command=None, timeout=30.0) -> FilterReport:
    try:
        report.judge = external_judge_hook(record, description, command, timeout)
    except JudgeUnavailable:
        report.judge = SKIPPED
    return report


def filter_records(records, bundle=None, tolerances: FilterTolerances = FilterTolerances(), description="",
                   command=None, timeout=30.0, max_in_flight=4) -> list:
    """Rule-filter every record, then consult the judge with bounded concurrency."""
    reports = [rule_filter(r, bundle, tolerances) for r in records]
    if not command:
        return reports
    with ThreadPoolExecutor(max_workers=max(1, int(max_in_flight))) as pool:
        done = pool.map(lambda pair: apply_judge(pair[0], pair[1], description, command, timeout),
                        zip(reports, records))
        return list(done)
