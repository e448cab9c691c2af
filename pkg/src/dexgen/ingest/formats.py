"""Binary geometry files (``DXF1``) and record blobs (``DXR1``).

DXF1 layout, all little-endian::

    b"DXF1"  u32 point_count  u8 flags
    float32[point_count, 3]  points
    float32[point_count, 3]  normals        (flags & 1)
    float32[point_count, 3]  colors         (flags & 2)
    u32 face_count  u32[face_count, 3]      (flags & 4, meshes only)

DXR1 blobs hold named arrays: ``b"DXR1"``, u32 header length, a UTF-8 JSON
header listing ``name/dtype/shape/offset``, then the raw array bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..geom import PointCloud, TriMesh

DXF_MAGIC = b"DXF1"
DXR_MAGIC = b"DXR1"
FLAG_NORMALS = 1
FLAG_COLORS = 2
FLAG_FACES = 4

_ALLOWED_DTYPES = {"<f8", "<f4", "<i8", "<i4", "|i1", "|u1", "<u4"}


def _encode_geometry(points, normals=None, colors=None, faces=None) -> bytes:
    pts = np.ascontiguousarray(points, dtype="<f4").reshape(-1, 3)
    flags = 0
    parts = [pts.tobytes()]
    if normals is not None:
        flags |= FLAG_NORMALS
        parts.append(np.ascontiguousarray(normals, dtype="<f4").reshape(-1, 3).tobytes())
    if colors is not None:
        flags |= FLAG_COLORS
        parts.append(np.ascontiguousarray(colors, dtype="<f4").reshape(-1, 3).tobytes())
    if faces is not None:
        flags |= FLAG_FACES
        f = np.ascontiguousarray(faces, dtype="<u4").reshape(-1, 3)
        parts.append(struct.pack("<I", len(f)) + f.tobytes())
    return DXF_MAGIC + struct.pack("<IB", len(pts), flags) + b"".join(parts)


def write_cloud(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(_encode_geometry(cloud.points, cloud.normals, cloud.colors))


def write_mesh(path, mesh: TriMesh) -> None:
    Path(path).write_bytes(_encode_geometry(mesh.vertices, faces=mesh.faces))


def _decode_geometry(data: bytes, where: str):
    if len(data) < 9 or data[:4] != DXF_MAGIC:
        raise FormatError("bad magic or short header", where)
    n, flags = struct.unpack_from("<IB", data, 4)
    off = 9
    block = n * 12

    def take(nbytes):
        nonlocal off
        if off + nbytes > len(data):
            raise FormatError("file truncated", where)
        chunk = data[off:off + nbytes]
        off += nbytes
        return chunk

    pts = np.frombuffer(take(block), dtype="<f4").reshape(n, 3).astype(float)
    normals = colors = faces = None
    if flags & FLAG_NORMALS:
        normals = np.frombuffer(take(block), dtype="<f4").reshape(n, 3).astype(float)
    if flags & FLAG_COLORS:
        colors = np.frombuffer(take(block), dtype="<f4").reshape(n, 3).astype(float)
    if flags & FLAG_FACES:
        (nf,) = struct.unpack("<I", take(4))
        faces = np.frombuffer(take(nf * 12), dtype="<u4").reshape(nf, 3).astype(np.int64)
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes", where)
    if not np.all(np.isfinite(pts)):
        raise FormatError("non-finite coordinates", where)
    return pts, normals, colors, faces


def read_cloud(path) -> PointCloud:
    pts, normals, colors, _ = _decode_geometry(Path(path).read_bytes(), str(path))
    if normals is not None:
        # float32 storage; renormalize to restore the unit-length invariant
        nn = np.linalg.norm(normals, axis=1, keepdims=True)
        if np.any(np.abs(nn - 1.0) > 1e-3):
            raise FormatError("normals are not unit length", str(path))
        normals = normals / nn
    return PointCloud(pts, normals, colors)


def read_mesh(path) -> TriMesh:
    pts, _, _, faces = _decode_geometry(Path(path).read_bytes(), str(path))
    if faces is None:
        raise FormatError("mesh file has no faces", str(path))
    try:
        return TriMesh(pts, faces)
    except ValueError as exc:
        raise FormatError(str(exc), str(path)) from None


# --------------------------------------------------------------------------
# record blobs


def encode_arrays(arrays: dict) -> bytes:
    header, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr)
        a = np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))
        raw = a.tobytes()
        header.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                       "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps({"arrays": header}, sort_keys=True, separators=(",", ":")).encode()
    return DXR_MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)


def decode_arrays(data: bytes, where: str) -> dict:
    if len(data) < 8 or data[:4] != DXR_MAGIC:
        raise FormatError("bad magic or short header", where)
    (hlen,) = struct.unpack_from("<I", data, 4)
    if 8 + hlen > len(data):
        raise FormatError("header truncated", where)
    try:
        header = json.loads(data[8:8 + hlen])
    except ValueError as exc:
        raise FormatError(f"header is not JSON: {exc}", where) from None
    base = 8 + hlen
    out = {}
    expected = 0
    for entry in header.get("arrays", []):
        dtype = entry["dtype"]
        if dtype not in _ALLOWED_DTYPES:
            raise FormatError(f"unsupported dtype {dtype}", f"{where}:{entry['name']}")
        start = base + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(data):
            raise FormatError("array data truncated", f"{where}:{entry['name']}")
        shape = tuple(entry["shape"])
        arr = np.frombuffer(data[start:stop], dtype=dtype)
        if arr.size != int(np.prod(shape)):
            raise FormatError("shape does not match byte count", f"{where}:{entry['name']}")
        out[entry["name"]] = arr.reshape(shape).astype(np.dtype(dtype).newbyteorder("="))
        expected = max(expected, stop)
    if expected != len(data):
        raise FormatError(f"blob size {len(data)} != declared {expected}", where)
    return out
