import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexgen import shapes
from dexgen.errors import FormatError, InvalidRate, InvariantViolation, MissingAsset
from dexgen.geom import PointCloud, Pose
from dexgen.ingest import (
    FrameRecord,
    ReconBundle,
    load_bundle,
    load_demo_dataset,
    read_cloud,
    read_mesh,
    resample_frame_indices,
    write_bundle,
    write_cloud,
    write_demo_dataset,
    write_mesh,
)
from dexgen.ingest.formats import decode_arrays, encode_arrays
from dexgen.record import records_equal

from conftest import random_record


# --- resampling ---------------------------------------------------------------

def test_resample_30_to_10():
    idx = resample_frame_indices(100, 30, 10)
    assert idx == list(range(0, 97, 3))
    assert len(idx) == 33  # K_t = 32


def test_resample_unit_rate_keeps_all():
    # floor(10*30/30) - 1 = 9, so i runs 0..9 and every frame survives
    assert resample_frame_indices(10, 30, 30) == list(range(10))


def test_resample_24_to_6():
    # K_t = floor(7*6/24) - 1 = 0
    assert resample_frame_indices(7, 24, 6) == [0]


def test_resample_fractional_rate():
    idx = resample_frame_indices(300, 29.97, 10)
    assert idx[:4] == [0, 2, 5, 8]
    assert all(i < 300 for i in idx)


@pytest.mark.parametrize("f,ft", [(30, 40), (30, 0), (30, -1)])
def test_resample_invalid(f, ft):
    with pytest.raises(InvalidRate):
        resample_frame_indices(10, f, ft)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 2000), st.integers(1, 120), st.integers(1, 120))
def test_resample_properties(K, f, ft):
    if ft > f:
        f, ft = ft, f
    idx = resample_frame_indices(K, f, ft)
    k_t = (K * ft) // f - 1
    assert len(idx) == max(k_t + 1, 0)
    assert all(0 <= i < K for i in idx)
    assert all(b > a for a, b in zip(idx, idx[1:]))
    # an already-resampled stream at the same rate keeps every frame
    if idx:
        assert resample_frame_indices(len(idx), ft, ft) == list(range(len(idx)))


# --- geometry files ------------------------------------------------------------

def test_cloud_round_trip(tmp_path, rng):
    n = rng.normal(size=(50, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    c = PointCloud(rng.normal(size=(50, 3)), n, rng.uniform(size=(50, 3)))
    write_cloud(tmp_path / "c.dxf", c)
    d = read_cloud(tmp_path / "c.dxf")
    np.testing.assert_allclose(d.points, c.points, atol=1e-6)
    np.testing.assert_allclose(d.normals, c.normals, atol=1e-6)
    np.testing.assert_allclose(d.colors, c.colors, atol=1e-6)
    raw = (tmp_path / "c.dxf").read_bytes()
    assert raw[:4] == b"DXF1" and raw[8] == 3


def test_mesh_round_trip_and_truncation(tmp_path):
    m = shapes.box([0.1, 0.2, 0.3])
    write_mesh(tmp_path / "m.dxf", m)
    r = read_mesh(tmp_path / "m.dxf")
    np.testing.assert_array_equal(r.faces, m.faces)
    raw = (tmp_path / "m.dxf").read_bytes()
    (tmp_path / "t.dxf").write_bytes(raw[:-5])
    with pytest.raises(FormatError):
        read_mesh(tmp_path / "t.dxf")


def test_blob_round_trip_dtypes():
    arrays = {"a": np.arange(6, dtype=np.int8).reshape(2, 3), "b": np.linspace(0, 1, 5),
              "c": np.zeros((0, 3), np.float32)}
    out = decode_arrays(encode_arrays(arrays), "x")
    for k, v in arrays.items():
        assert out[k].dtype == v.dtype
        np.testing.assert_array_equal(out[k], v)


# --- bundles -------------------------------------------------------------------

def small_bundle(n_frames=2, f=30, ft=30):
    idx = resample_frame_indices(n_frames, f, ft)
    frames = []
    for k, i in enumerate(idx):
        frames.append(FrameRecord(
            index=i, timestamp=i / f,
            object_poses={"cube": Pose(translation=[0.0, 0.0, 0.8 + 0.01 * k])},
            hand_poses={"left": Pose(translation=[0.2, 0, 0.8]), "right": Pose(translation=[-0.2, 0, 0.8])},
        ))
    table = PointCloud(np.c_[np.random.default_rng(0).uniform(-0.3, 0.3, (100, 2)), np.full(100, 0.9)])
    return ReconBundle("tiny", n_frames, f, ft, frames, {"cube": shapes.box([0.05] * 3)}, table)


def test_bundle_round_trip(tmp_path):
    b = small_bundle()
    write_bundle(b, tmp_path / "b")
    r = load_bundle(tmp_path / "b")
    assert len(r.frames) == 2
    assert r.object_ids == ["cube"]
    assert r.frames[1].object_poses["cube"].allclose(b.frames[1].object_poses["cube"], atol=1e-12)


def test_bundle_missing_mesh(tmp_path):
    write_bundle(small_bundle(), tmp_path / "b")
    (tmp_path / "b" / "meshes" / "object_cube.dxf").unlink()
    with pytest.raises(MissingAsset):
        load_bundle(tmp_path / "b")


def _edit_manifest(path, fn):
    m = json.loads((path / "manifest.json").read_text())
    fn(m)
    (path / "manifest.json").write_text(json.dumps(m))


def test_bundle_unnormalized_quaternion_names_frame(tmp_path):
    p = tmp_path / "b"
    write_bundle(small_bundle(n_frames=3), p)

    def bump(m):
        m["frames"][1]["hand_poses"]["left"][:4] = [1.1, 0.0, 0.0, 0.0]
    _edit_manifest(p, bump)
    with pytest.raises(InvariantViolation, match="frame 1"):
        load_bundle(p)


def test_bundle_missing_field_has_path(tmp_path):
    p = tmp_path / "b"
    write_bundle(small_bundle(), p)
    _edit_manifest(p, lambda m: m["frames"][0].pop("timestamp"))
    with pytest.raises(FormatError) as ei:
        load_bundle(p)
    assert ei.value.field == "manifest.frames[0].timestamp"


def test_bundle_silently_missing_frame(tmp_path):
    p = tmp_path / "b"
    write_bundle(small_bundle(n_frames=30, f=30, ft=10), p)
    _edit_manifest(p, lambda m: m["frames"].pop(3))
    with pytest.raises(InvariantViolation, match="missing"):
        load_bundle(p)


def test_bundle_missing_table(tmp_path):
    p = tmp_path / "b"
    write_bundle(small_bundle(), p)
    _edit_manifest(p, lambda m: m.pop("table_cloud"))
    with pytest.raises(FormatError):
        load_bundle(p)


_MUTATIONS = [
    lambda m: m["frames"][0].update(timestamp=m["frames"][-1]["timestamp"] + 1),
    lambda m: m["frames"][1].update(object_poses={}),
    lambda m: m["frames"][0].update(index=1),
    lambda m: m["frames"][0]["object_poses"]["cube"].pop(),
    lambda m: m["frames"][0]["object_poses"].update(ghost=[1, 0, 0, 0, 0, 0, 0]),
    lambda m: m.update(frame_rate_target=60),
    lambda m: m.update(source_frame_count="ten"),
    lambda m: m["objects"][0].pop("id"),
    lambda m: m.update(frames=[]),
]


@pytest.mark.parametrize("k", range(len(_MUTATIONS)))
def test_bundle_mutations_rejected(tmp_path, k):
    p = tmp_path / "b"
    write_bundle(small_bundle(n_frames=4), p)
    _edit_manifest(p, _MUTATIONS[k])
    with pytest.raises((FormatError, InvariantViolation, MissingAsset)):
        load_bundle(p)


# --- datasets ------------------------------------------------------------------

def test_dataset_round_trip_one(tmp_path, rng):
    r = random_record(rng)
    write_demo_dataset([r], tmp_path / "d")
    (back,) = load_demo_dataset(tmp_path / "d")
    assert records_equal(r, back, atol=0.0)


def test_dataset_hundred_order(tmp_path, rng):
    recs = [random_record(rng, T=3, record_id=f"r{i}") for i in range(100)]
    write_demo_dataset(recs, tmp_path / "d")
    back = load_demo_dataset(tmp_path / "d")
    assert [b.record_id for b in back] == [r.record_id for r in recs]


def test_dataset_rewrite_is_byte_identical(tmp_path, rng):
    recs = [random_record(rng, record_id=f"r{i}") for i in range(3)]
    write_demo_dataset(recs, tmp_path / "a")
    write_demo_dataset(recs, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_dataset_truncated(tmp_path, rng):
    write_demo_dataset([random_record(rng, record_id=f"r{i}") for i in range(2)], tmp_path / "d")
    blob = tmp_path / "d" / "000001.bin"
    blob.write_bytes(blob.read_bytes()[:-10])
    with pytest.raises(FormatError):
        load_demo_dataset(tmp_path / "d")
    idx = tmp_path / "d" / "records.jsonl"
    idx.write_text(idx.read_text()[:-20])
    with pytest.raises(FormatError):
        load_demo_dataset(tmp_path / "d")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 8), st.integers(1, 3))
def test_dataset_round_trip_property(tmp_path_factory, seed, N, T, O):
    rng = np.random.default_rng(seed)
    r = random_record(rng, N=min(N, 2), T=T, O=O)
    d = tmp_path_factory.mktemp("ds")
    write_demo_dataset([r], d)
    assert records_equal(r, load_demo_dataset(d)[0], atol=1e-12)
