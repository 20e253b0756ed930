import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artikin.errors import SchemaError
from artikin.kinematics import JointModel, joint_transform, joint_transforms

from conftest import preset_scene, revolute_model


def test_revolute_half_turn_about_offset_line():
    m = JointModel.revolute([0, 0, 1], [1, 0, 0], [0.0, np.pi])
    assert np.allclose(joint_transform(m, 1).apply(np.zeros(3)), [2, 0, 0])


def test_prismatic_translation():
    m = JointModel.prismatic([1, 0, 0], [0.0, 0.05])
    T = joint_transform(m, 1)
    assert np.allclose(T.translation, [0.05, 0, 0]) and np.allclose(T.rotation, np.eye(3))


def test_pivot_normalized_to_foot_point():
    m = JointModel.revolute([0, 0, 2], [0.3, 0, 5.0], [0, 1])
    assert np.allclose(m.pivot, [0.3, 0, 0]) and np.allclose(m.axis, [0, 0, 1])


def test_states_must_start_at_zero():
    with pytest.raises(ValueError):
        JointModel("prismatic", [1, 0, 0], [0.1, 0.2])


@given(st.integers(0, 10_000))
def test_batched_transforms_agree(seed):
    m = revolute_model(np.random.default_rng(seed), n=6)
    R, t = joint_transforms(m)
    for i in range(6):
        T = joint_transform(m, i)
        assert np.allclose(R[i], T.rotation) and np.allclose(t[i], T.translation)


@given(st.integers(0, 10_000))
def test_pivot_points_fixed(seed):
    rng = np.random.default_rng(seed)
    m = revolute_model(rng, n=5)
    p = m.pivot + rng.normal() * m.axis
    for i in range(5):
        assert np.allclose(joint_transform(m, i).apply(p), p)


def test_dict_round_trip(rng):
    m = revolute_model(rng)
    m2 = JointModel.from_dict(m.to_dict())
    assert m2.kind == m.kind and np.array_equal(m2.axis, m.axis) and np.array_equal(m2.states, m.states)


def test_from_dict_bad_kind():
    with pytest.raises(SchemaError):
        JointModel.from_dict({"kind": "ball", "axis": [0, 0, 1], "states": [0]})


@pytest.mark.parametrize("name", ["laptop-like", "drawer-like"])
def test_generator_relative_pose_matches_joint_transform(name):
    gt = preset_scene(name, noise="none").ground_truth
    cal = gt.calibrated_poses()
    for i in range(gt.joint.frame_count):
        T = cal[i][0].inverse() @ cal[i][1]
        J = joint_transform(gt.joint, i)
        assert np.abs(T.as_matrix() - J.as_matrix()).max() < 1e-10
