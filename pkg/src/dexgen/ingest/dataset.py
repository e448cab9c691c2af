"""Demonstration dataset on disk.

``records.jsonl`` holds one JSON object per record (ids, labels, grasps,
provenance, blob name); each record's arrays live in ``NNNNNN.bin`` (DXR1).
Output bytes are a pure function of the records, so regenerating a dataset
with the same seed reproduces it byte for byte.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from ..errors import EmptyInput, FormatError, InputError, MissingAsset
from ..geom import TriMesh
from ..record import ARRAY_FIELDS, DemoRecord
from .formats import decode_arrays, encode_arrays

INDEX = "records.jsonl"
LOCK = ".lock"

_DTYPES = {"grasp_index": np.int32, "kind": np.int8, "assoc": np.int32, "attached": np.int32,
           "obs_points": np.float32, "obs_offsets": np.int64}


class DatasetBusy(InputError):
    pass


@contextmanager
def exclusive_dir(path: Path):
    """Hold an exclusive lock file inside ``path`` for the duration."""
    path.mkdir(parents=True, exist_ok=True)
    lock = path / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DatasetBusy(f"{path} is locked by another writer ({lock})") from None
    try:
        os.close(fd)
        yield path
    finally:
        lock.unlink(missing_ok=True)


def blob_name(i: int) -> str:
    return f"{i:06d}.bin"


def _record_arrays(r: DemoRecord) -> dict:
    arrays = {}
    for name in ARRAY_FIELDS:
        a = np.asarray(getattr(r, name))
        arrays[name] = a.astype(_DTYPES.get(name, np.float64), copy=False)
    for k, m in enumerate(r.object_meshes):
        arrays[f"mesh{k}_vertices"] = m.vertices.astype(np.float64)
        arrays[f"mesh{k}_faces"] = m.faces.astype(np.int32)
    return arrays


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_demo_dataset(records, path) -> Path:
    records = list(records)
    if not records:
        raise EmptyInput("no records to write")
    root = Path(path)
    with exclusive_dir(root):
        for old in root.glob("*.bin"):
            old.unlink()
        lines = []
        for i, r in enumerate(records):
            r.check()
            name = blob_name(i)
            (root / name).write_bytes(encode_arrays(_record_arrays(r)))
            lines.append(_dumps({
                "index": i,
                "record_id": r.record_id,
                "blob": name,
                "sides": list(r.sides),
                "object_ids": list(r.object_ids),
                "grasps": r.grasps,
                "provenance": r.provenance,
            }))
        tmp = root / (INDEX + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        tmp.replace(root / INDEX)
    return root


def read_index(path) -> list:
    root = Path(path)
    idx = root / INDEX
    if not idx.is_file():
        raise MissingAsset(f"no dataset index at {idx}")
    text = idx.read_text(encoding="utf-8")
    if text and not text.endswith("\n"):
        raise FormatError("index truncated (no trailing newline)", str(idx))
    out = []
    for n, line in enumerate(text.splitlines()):
        try:
            meta = json.loads(line)
        except ValueError as exc:
            raise FormatError(f"line {n + 1} is not JSON: {exc}", str(idx)) from None
        for key in ("index", "record_id", "blob", "sides", "object_ids", "grasps", "provenance"):
            if key not in meta:
                raise FormatError("missing required field", f"{idx.name}:{n + 1}.{key}")
        out.append(meta)
    return out


def _build_record(meta, arrays, where) -> DemoRecord:
    try:
        meshes = []
        for k in range(len(meta["object_ids"])):
            meshes.append(TriMesh(arrays[f"mesh{k}_vertices"], arrays[f"mesh{k}_faces"].astype(np.int64)))
        kw = {name: arrays[name] for name in ARRAY_FIELDS}
    except KeyError as exc:
        raise FormatError("missing array", f"{where}:{exc.args[0]}") from None
    rec = DemoRecord(record_id=meta["record_id"], sides=list(meta["sides"]),
                     object_ids=list(meta["object_ids"]), object_meshes=meshes,
                     grasps=meta["grasps"], provenance=meta["provenance"], **kw)
    try:
        rec.check()
    except ValueError as exc:
        raise FormatError(str(exc), where) from None
    return rec


def load_demo_dataset(path) -> list:
    """Load every record; any defect raises before a single record is returned."""
    root = Path(path)
    records = []
    for meta in read_index(root):
        blob = root / meta["blob"]
        if not blob.is_file():
            raise MissingAsset(f"record blob missing: {blob}")
        arrays = decode_arrays(blob.read_bytes(), str(blob))
        records.append(_build_record(meta, arrays, str(blob)))
    return records
