import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curb.core import (NO_INSTANCE, Pose, SemanticClass, SemanticPointCloud,
                       compose, quat_from_rotvec, quat_to_rotvec,
                       transform_cloud)
from oracles import mat_apply, mat_from_pose


def random_pose(rng) -> Pose:
    axis = rng.normal(size=3)
    angle = rng.uniform(-np.pi, np.pi)
    v = axis / np.linalg.norm(axis) * angle
    return Pose(rng.uniform(-10, 10, size=3), quat_from_rotvec(v))


pose_strategy = st.builds(
    lambda seed: random_pose(np.random.default_rng(seed)),
    st.integers(min_value=0, max_value=2**32 - 1))


def test_compose_identity_cases():
    ident = Pose.identity()
    assert compose(ident, ident).approx_equal(ident)
    a = Pose.from_translation(1, 0, 0)
    b = Pose.from_translation(0, 2, 0)
    assert compose(a, b).approx_equal(Pose.from_translation(1, 2, 0))


def test_compose_rotation_then_translation_matrix_oracle():
    p = compose(Pose.rot_z(np.radians(90)), Pose.from_translation(1, 0, 0))
    expect = mat_apply(mat_from_pose(Pose.rot_z(np.radians(90))),
                       np.array([1.0, 0.0, 0.0]))
    assert np.allclose(p.t, expect, atol=1e-12)
    assert np.allclose(p.t, [0.0, 1.0, 0.0], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(pose_strategy, pose_strategy, pose_strategy)
def test_pose_group_laws(a, b, c):
    ab_c = compose(compose(a, b), c)
    a_bc = compose(a, compose(b, c))
    dt, da = ab_c.distance(a_bc)
    assert dt < 1e-9 and da < 1e-9
    dt, da = compose(a, a.inverse()).distance(Pose.identity())
    assert dt < 1e-9 and da < 1e-9
    dt, da = compose(a, Pose.identity()).distance(a)
    assert dt < 1e-9 and da < 1e-9
    assert abs(np.linalg.norm(a.q) - 1.0) < 1e-9


@settings(max_examples=50, deadline=None)
@given(pose_strategy, pose_strategy)
def test_pose_matches_matrix_oracle(a, b):
    m = mat_from_pose(a) @ mat_from_pose(b)
    p = compose(a, b)
    assert np.allclose(mat_from_pose(p), m, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(pose_strategy, pose_strategy)
def test_pose_distance_metric(a, b):
    dt, da = a.distance(b)
    assert dt >= 0 and da >= 0
    st_, sa = a.distance(a)
    assert st_ == 0 and sa < 1e-9


def test_rotvec_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(20):
        v = rng.normal(size=3)
        v = v / np.linalg.norm(v) * rng.uniform(0, np.pi - 1e-3)
        back = quat_to_rotvec(quat_from_rotvec(v))
        assert np.allclose(back, v, atol=1e-9)


def make_cloud(rng, n=50, frame="sensor"):
    classes = rng.choice([int(SemanticClass.Road), int(SemanticClass.Building),
                          int(SemanticClass.Vehicles)], size=n)
    inst = np.where(classes == int(SemanticClass.Vehicles),
                    rng.integers(0, 5, size=n), NO_INSTANCE)
    return SemanticPointCloud(rng.normal(size=(n, 3)), classes, inst, frame)


def test_transform_cloud_identity_and_translation():
    rng = np.random.default_rng(5)
    c = make_cloud(rng)
    same = transform_cloud(Pose.identity(), c)
    assert np.array_equal(same.xyz, c.xyz)
    single = SemanticPointCloud(np.array([[1.0, 1.0, 0.0]]),
                                [int(SemanticClass.Road)])
    moved = transform_cloud(Pose.from_translation(0, 0, 5), single)
    assert np.allclose(moved.xyz[0], [1, 1, 5])


def test_transform_cloud_rotation_matrix_oracle():
    c = SemanticPointCloud(np.array([[1.0, 0.0, 0.0]]),
                           [int(SemanticClass.Road)])
    out = transform_cloud(Pose.rot_z(np.pi), c)
    assert np.allclose(out.xyz[0], [-1, 0, 0], atol=1e-9)


def test_transform_cloud_preserves_labels_and_counts():
    rng = np.random.default_rng(6)
    c = make_cloud(rng, 120)
    p = random_pose(rng)
    out = transform_cloud(p, c, frame="world")
    assert len(out) == len(c)
    assert out.class_histogram() == c.class_histogram()
    assert sorted(out.instance_ids) == sorted(c.instance_ids)
    assert out.frame == "world"


def test_instance_id_invariant_enforced():
    with pytest.raises(ValueError):
        SemanticPointCloud(np.zeros((1, 3)), [int(SemanticClass.Road)], [3])
    with pytest.raises(ValueError):
        SemanticPointCloud(np.zeros((1, 3)), [int(SemanticClass.Vehicles)],
                           [NO_INSTANCE])


def test_stuff_thing_partition_of_classes():
    from curb.core import THING_CLASSES, is_thing
    assert THING_CLASSES == {SemanticClass.Vehicles, SemanticClass.Pedestrian}
    for cls in SemanticClass:
        assert is_thing(cls) == (cls in THING_CLASSES)


def test_pose_immutable_and_serializable():
    p = Pose.from_xy_yaw(1.0, 2.0, 0.3)
    with pytest.raises(AttributeError):
        p.t = np.zeros(3)
    q = Pose.from_list(p.to_list())
    assert q.approx_equal(p)
