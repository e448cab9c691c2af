import numpy as np
import pytest
from hypothesis import strategies as st

from dexgen.geom import Pose


def random_pose(rng, scale=1.0):
    q = rng.normal(size=4)
    return Pose(q, rng.normal(size=3) * scale)


@st.composite
def poses(draw, scale=1.0):
    q = draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4))
    if np.linalg.norm(q) < 1e-3:
        q = [1.0, 0.0, 0.0, 0.0]
    t = draw(st.lists(st.floats(-scale, scale, allow_nan=False), min_size=3, max_size=3))
    return Pose(np.array(q), np.array(t))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_record(rng, N=2, T=6, J=4, O=2, record_id="r0"):
    """A structurally valid DemoRecord filled with random values."""
    from dexgen import shapes
    from dexgen.record import DemoRecord

    def poses(*shape):
        q = rng.normal(size=shape + (4,))
        q /= np.linalg.norm(q, axis=-1, keepdims=True)
        q[q[..., 0] < 0] *= -1
        return np.concatenate([q, rng.normal(size=shape + (3,))], axis=-1)

    counts = rng.integers(0, 20, size=T)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return DemoRecord(
        record_id=record_id,
        sides=["left", "right"][:N],
        wrist=poses(N, T),
        joints=rng.normal(size=(N, T, J)),
        grip=rng.uniform(size=(N, T)),
        grasp_index=rng.integers(-1, 3, size=(N, T)).astype(np.int32),
        kind=rng.integers(0, 5, size=(N, T)).astype(np.int8),
        assoc=rng.integers(-1, O, size=(N, T)).astype(np.int32),
        attached=rng.integers(-1, O, size=(N, T)).astype(np.int32),
        object_ids=[f"obj{k}" for k in range(O)],
        object_poses=poses(O, T),
        target_poses=poses(O),
        object_meshes=[shapes.box(rng.uniform(0.05, 0.2, 3)) for _ in range(O)],
        object_scale=rng.uniform(0.8, 1.2, size=O),
        camera=poses(1)[0],
        obs_points=rng.normal(size=(int(offsets[-1]), 3)).astype(np.float32),
        obs_offsets=offsets,
        q_open=rng.normal(size=J),
        joint_limits=np.sort(rng.normal(size=(J, 2)), axis=1),
        grasps=[{"task": 0, "residual": float(rng.uniform()), "q": rng.normal(size=J).tolist()}],
        provenance={"bundle": "b", "seed": int(rng.integers(1 << 30)), "scale": 1.0},
    )


# --- generated fixtures shared across test modules ------------------------------

_SOURCES = {}


def generated_source(name):
    """(world bundle, annotation, source record) for a named fixture, built once per session."""
    if name not in _SOURCES:
        from dexgen.align import align_bundle
        from dexgen.fixtures import make_fixture
        from dexgen.grasp import Kinematics, load_reference_hand
        from dexgen.pipeline import generate_source

        bundle, ann, _ = make_fixture(name)
        world, _ = align_bundle(bundle, 0.6)
        kin = Kinematics(load_reference_hand())
        record, _ = generate_source(world, ann, kin, seed=0)
        _SOURCES[name] = (world, ann, record)
    return _SOURCES[name]


@pytest.fixture(scope="session")
def kin():
    from dexgen.grasp import Kinematics, load_reference_hand
    return Kinematics(load_reference_hand())


@pytest.fixture(scope="session")
def pick_place():
    return generated_source("pick-place")


@pytest.fixture(scope="session")
def bimanual_lift():
    return generated_source("bimanual-lift")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
