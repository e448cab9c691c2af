"""Action-centric scheduling of tasks onto embodiment action queues.

A task owns one object and an ordered list of subactions, each with a start
frame. The scheduler walks the horizon frame by frame, keeps at most ``N``
tasks active, and asks an executor for the trajectory of each subaction when
it becomes due. Trajectories are written into per-embodiment queues, and no
queue slot is ever written twice.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DexgenError, ExecutorFailure, InputError, ScheduleConflict

ACTION_TYPES = ("pregrasp", "grasp", "motion", "release")


@dataclass(frozen=True)
class Subaction:
    action_type: str
    start_frame: int

    def __post_init__(self):
        if self.action_type not in ACTION_TYPES:
            raise InputError(f"unknown action type {self.action_type!r}")
        if int(self.start_frame) != self.start_frame or self.start_frame < 0:
            raise InputError(f"start frame must be a non-negative integer, got {self.start_frame}")


@dataclass(frozen=True)
class Task:
    embodiments: tuple
    object_id: str
    subactions: tuple
    cursor: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "embodiments", tuple(int(e) for e in self.embodiments))
        object.__setattr__(self, "subactions", tuple(self.subactions))
        if not self.embodiments:
            raise InputError("task needs at least one embodiment")
        if len(set(self.embodiments)) != len(self.embodiments):
            raise InputError(f"duplicate embodiment in {self.embodiments}")
        if not self.subactions:
            raise InputError("task needs at least one subaction")
        starts = [s.start_frame for s in self.subactions]
        if any(b < a for a, b in zip(starts, starts[1:])):
            raise InputError(f"subaction start frames decrease: {starts}")
        if not 0 <= self.cursor <= len(self.subactions):
            raise InputError(f"cursor {self.cursor} out of range")

    @property
    def start_frame(self) -> int:
        return self.subactions[0].start_frame

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.subactions)


def _retime(segment, n: int):
    """Compress a segment to ``n`` frames, keeping both endpoints."""
    if hasattr(segment, "retimed"):
        return segment.retimed(n)
    idx = np.round(np.linspace(0, len(segment) - 1, n)).astype(int)
    return [segment[i] for i in idx]


class ActionQueue:
    """Per-frame slots for one embodiment. Slots reference (segment, local frame)."""

    def __init__(self, embodiment: int, horizon: int):
        self.embodiment = embodiment
        self.horizon = horizon
        self.slots = np.full(horizon, -1, dtype=np.int64)
        self.segments = []   # (task_index, subaction_index, start, segment)
        self.writes = []     # (frame, segment_id) log, used for conflict audits

    def write(self, start: int, segment, task_index: int, sub_index: int, strict=True) -> int:
        n = len(segment)
        if start < 0 or start + n > self.horizon:
            raise ScheduleConflict(self.embodiment, start,
                                   f"segment [{start}, {start + n}) leaves horizon {self.horizon}")
        frames = np.arange(start, start + n)
        if strict:
            busy = frames[self.slots[frames] >= 0]
            if len(busy):
                raise ScheduleConflict(self.embodiment, int(busy[0]))
        sid = len(self.segments)
        self.segments.append((task_index, sub_index, start, segment))
        self.slots[frames] = sid
        self.writes.extend((int(t), sid) for t in frames)
        return sid

    def entry(self, t: int):
        sid = self.slots[t]
        if sid < 0:
            return None
        _, _, start, seg = self.segments[sid]
        return seg[t - start]

    def owner(self, t: int):
        sid = self.slots[t]
        if sid < 0:
            return None
        return self.segments[sid][:2]

    def filled(self) -> np.ndarray:
        return self.slots >= 0

    def __len__(self):
        return self.horizon


@dataclass
class ScheduleEvent:
    frame: int
    task_index: int
    sub_index: int
    action_type: str
    embodiments: tuple
    length: int
    delay: int


@dataclass
class ScheduleResult:
    queues: list
    tasks: list                      # copies with final cursors
    events: list = field(default_factory=list)
    active_sizes: list = field(default_factory=list)

    @property
    def completed(self) -> list:
        return [t.done for t in self.tasks]


Executor = Callable[[int, Task, int, Subaction, int, int], dict]


def schedule(N: int, T: int, tasks, executor: Executor) -> ScheduleResult:
    """Run the scheduler.

    ``executor(task_index, task, sub_index, subaction, t, max_len)`` returns a
    mapping embodiment -> segment (any sized, indexable sequence). Segments
    longer than ``max_len`` are compressed to fit.
    """
    if T < 1:
        raise InputError(f"horizon must be >= 1, got {T}")
    tasks = [replace(t, cursor=0) for t in tasks]
    for i, task in enumerate(tasks):
        bad = [e for e in task.embodiments if not 0 <= e < N]
        if bad:
            raise InputError(f"task {i} references embodiments {bad} outside 0..{N - 1}")
        if task.subactions[-1].start_frame >= T:
            raise InputError(f"task {i} has a subaction starting at or after horizon {T}")

    queues = [ActionQueue(e, T) for e in range(N)]
    result = ScheduleResult(queues=queues, tasks=tasks)
    pending = deque(sorted(range(len(tasks)), key=lambda i: (tasks[i].start_frame, i)))
    active: list = []
    shift = [0] * len(tasks)
    free_at = [0] * N

    for t in range(T):
        # admission at the start of each frame
        while len(active) < N and pending:
            active.append(pending.popleft())
        result.active_sizes.append(len(active))
        order = sorted(active, key=lambda i: (tasks[i].subactions[tasks[i].cursor].start_frame + shift[i], i))
        for i in order:
            task = tasks[i]
            k = task.cursor
            sub = task.subactions[k]
            if sub.start_frame + shift[i] > t:
                continue
            if any(free_at[e] > t for e in task.embodiments):
                continue  # wait; the delay carries over to later subactions
            shift[i] = t - sub.start_frame
            if k + 1 < len(task.subactions):
                limit = task.subactions[k + 1].start_frame + shift[i]
            else:
                limit = T
            max_len = max(1, min(limit, T) - t)
            try:
                segs = executor(i, task, k, sub, t, max_len)
            except (ScheduleConflict, ExecutorFailure):
                raise
            except DexgenError as exc:
                raise ExecutorFailure(i, k, exc) from exc
            if set(segs) != set(task.embodiments):
                raise ExecutorFailure(i, k, InputError(
                    f"executor returned embodiments {sorted(segs)}, expected {sorted(task.embodiments)}"))
            length = 0
            for e in task.embodiments:
                seg = segs[e]
                if len(seg) == 0:
                    raise ExecutorFailure(i, k, InputError("executor returned an empty segment"))
                if len(seg) > max_len:
                    seg = _retime(seg, max_len)
                queues[e].write(t, seg, i, k)
                free_at[e] = t + len(seg)
                length = max(length, len(seg))
            result.events.append(ScheduleEvent(t, i, k, sub.action_type, task.embodiments, length, shift[i]))
            task = replace(task, cursor=k + 1)
            tasks[i] = task
            if task.done:
                active.remove(i)
    result.tasks = tasks
    return result


@dataclass
class ScheduleReport:
    conflicts: list          # (embodiment, frame)
    utilization: list        # fraction of filled frames per embodiment
    task_status: dict        # task index -> sorted list of executed subaction indices

    @property
    def ok(self) -> bool:
        return not self.conflicts


def validate_schedule(queues, tasks: Optional[list] = None) -> ScheduleReport:
    conflicts, util, status = [], [], {}
    for q in queues:
        seen = {}
        for t, sid in q.writes:
            if t in seen and seen[t] != sid:
                conflicts.append((q.embodiment, t))
            seen.setdefault(t, sid)
        util.append(float(q.filled().mean()) if q.horizon else 0.0)
        for ti, si, _, _ in q.segments:
            status.setdefault(ti, set()).add(si)
    status = {k: sorted(v) for k, v in sorted(status.items())}
    if tasks is not None:
        for i in range(len(tasks)):
            status.setdefault(i, [])
    return ScheduleReport(sorted(set(conflicts)), util, status)
