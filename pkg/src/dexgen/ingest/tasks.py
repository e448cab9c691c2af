"""Task annotation files.

JSON layout::

    {"horizon": T, "embodiments": N,
     "tasks": [{"name": str, "object": id, "embodiments": [0, 1],
                "subactions": [{"type": "pregrasp", "start": 0}, ...]}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import FormatError, InputError, InvariantViolation, MissingAsset
from ..schedule import Subaction, Task


@dataclass(frozen=True)
class TaskAnnotation:
    horizon: int
    n_embodiments: int
    tasks: tuple

    def check_objects(self, object_ids) -> None:
        known = set(object_ids)
        for i, t in enumerate(self.tasks):
            if t.object_id not in known:
                raise InvariantViolation(f"task {i} references unknown object {t.object_id!r}")

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "embodiments": self.n_embodiments,
            "tasks": [{"name": t.name, "object": t.object_id, "embodiments": list(t.embodiments),
                       "subactions": [{"type": s.action_type, "start": s.start_frame} for s in t.subactions]}
                      for t in self.tasks],
        }


def annotation_from_dict(d) -> TaskAnnotation:
    if not isinstance(d, dict):
        raise FormatError("expected an object", "tasks")
    try:
        T = int(d["horizon"])
        N = int(d["embodiments"])
    except KeyError as exc:
        raise FormatError("missing required field", f"annotation.{exc.args[0]}") from None
    if T < 1 or N < 1:
        raise InvariantViolation("horizon and embodiment count must be positive")
    tasks = []
    for i, td in enumerate(d.get("tasks", [])):
        where = f"annotation.tasks[{i}]"
        try:
            subs = [Subaction(s["type"], int(s["start"])) for s in td["subactions"]]
            task = Task(tuple(td["embodiments"]), str(td["object"]), tuple(subs), name=td.get("name", f"task{i}"))
        except KeyError as exc:
            raise FormatError("missing required field", f"{where}.{exc.args[0]}") from None
        except InputError as exc:
            raise InvariantViolation(f"{where}: {exc}") from None
        if any(e >= N for e in task.embodiments):
            raise InvariantViolation(f"{where}: embodiment id >= {N}")
        if task.subactions[-1].start_frame >= T:
            raise InvariantViolation(f"{where}: subaction starts at or past horizon {T}")
        tasks.append(task)
    return TaskAnnotation(T, N, tuple(tasks))


def load_task_annotation(path, object_ids=None) -> TaskAnnotation:
    p = Path(path)
    if not p.is_file():
        raise MissingAsset(f"task annotation not found: {p}")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"not valid JSON: {exc}", str(p)) from None
    ann = annotation_from_dict(d)
    if object_ids is not None:
        ann.check_objects(object_ids)
    return ann


def write_task_annotation(ann: TaskAnnotation, path) -> None:
    Path(path).write_text(json.dumps(ann.to_dict(), indent=1) + "\n", encoding="utf-8")
