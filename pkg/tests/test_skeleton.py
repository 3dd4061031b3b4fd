import math

import numpy as np
import pytest
import torch

from dart.rotations import matrix_to_rot6d, random_rotation_matrix, rot6d_to_matrix
from dart.skeleton import ROOT_SENTINEL, Skeleton, forward_kinematics, skeleton_22, toy_skeleton


def identity_theta(j, dtype=torch.float64):
    theta = torch.zeros(j - 1, 6, dtype=dtype)
    theta[:, 0] = 1.0
    theta[:, 4] = 1.0
    return theta


def rest_pose_positions(skel):
    """Independent oracle: accumulate offsets along parent chains."""
    j = skel.joint_count
    pos = np.zeros((j, 3))
    for i in range(1, j):
        pos[i] = pos[skel.parent[i]] + skel.rest_offsets[i]
    return pos


def test_rest_pose_matches_cumulative_offsets():
    skel = toy_skeleton()
    joints = forward_kinematics(
        skel,
        torch.zeros(3, dtype=torch.float64),
        torch.tensor([1.0, 0, 0, 0, 1, 0], dtype=torch.float64),
        identity_theta(skel.joint_count),
    )
    assert np.allclose(joints.numpy(), rest_pose_positions(skel), atol=1e-12)


def test_translation_equivariance():
    skel = toy_skeleton()
    t = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)
    joints = forward_kinematics(
        skel, t, torch.tensor([1.0, 0, 0, 0, 1, 0], dtype=torch.float64),
        identity_theta(skel.joint_count),
    )
    assert np.allclose(joints.numpy(), rest_pose_positions(skel) + t.numpy(), atol=1e-12)


def test_two_joint_chain_root_rotation():
    # child offset (0,0,-1); root rotated 90 degrees about x moves it to (0,1,-0) -> (0,1,0)*(-1)?
    # R_x(90): (0,0,-1) -> (0,1,0) * ... hand computation: R_x(90) @ (0,0,-1) = (0, 1, 0) * 1? cos90=0,sin90=1
    # R_x(90) = [[1,0,0],[0,0,-1],[0,1,0]]; @(0,0,-1) = (0, 1, 0)
    skel = Skeleton(
        name="chain2",
        parent=(ROOT_SENTINEL, 0, 1, 2),
        rest_offsets=np.array([[0.0, 0, 0], [0.0, 0, -1.0], [0, 0, -1.0], [0, 0, -1.0]]),
        joint_names=("a", "b", "c", "d"),
        left_hip=1,
        right_hip=2,
        foot_joints=(3,),
    )
    rx90 = torch.tensor([[1.0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=torch.float64)
    joints = forward_kinematics(
        skel, torch.zeros(3, dtype=torch.float64), matrix_to_rot6d(rx90),
        identity_theta(4),
    )
    assert torch.allclose(joints[1], torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64), atol=1e-12)
    assert torch.allclose(joints[2], torch.tensor([0.0, 2.0, 0.0], dtype=torch.float64), atol=1e-12)


def test_rotation_equivariance():
    skel = toy_skeleton()
    gen = torch.Generator().manual_seed(11)
    theta = torch.rand(skel.joint_count - 1, 6, generator=gen, dtype=torch.float64)
    theta = matrix_to_rot6d(rot6d_to_matrix(theta))
    base_rot = random_rotation_matrix(gen)
    extra = random_rotation_matrix(gen)

    j1 = forward_kinematics(skel, torch.zeros(3, dtype=torch.float64), matrix_to_rot6d(base_rot), theta)
    j2 = forward_kinematics(
        skel, torch.zeros(3, dtype=torch.float64), matrix_to_rot6d(extra @ base_rot), theta
    )
    assert torch.allclose(j2, j1 @ extra.T, atol=1e-10)


def test_batched_fk_matches_loop():
    skel = toy_skeleton()
    gen = torch.Generator().manual_seed(5)
    T = 4
    t = torch.randn(T, 3, generator=gen, dtype=torch.float64)
    rot = matrix_to_rot6d(torch.stack([random_rotation_matrix(gen) for _ in range(T)]))
    theta = torch.stack([identity_theta(skel.joint_count) for _ in range(T)])
    batched = forward_kinematics(skel, t, rot, theta)
    for k in range(T):
        single = forward_kinematics(skel, t[k], rot[k], theta[k])
        assert torch.allclose(batched[k], single, atol=1e-12)


def test_invariants_enforced():
    with pytest.raises(ValueError):
        Skeleton(
            name="bad",
            parent=(ROOT_SENTINEL, 2, 1, 0),  # parent[1] >= 1
            rest_offsets=np.zeros((4, 3)),
            joint_names=("a", "b", "c", "d"),
            left_hip=1,
            right_hip=2,
            foot_joints=(3,),
        )
    with pytest.raises(ValueError):
        Skeleton(
            name="bad",
            parent=(ROOT_SENTINEL, 0, 1, 2),
            rest_offsets=np.zeros((4, 3)),
            joint_names=("a", "b", "c", "d"),
            left_hip=1,
            right_hip=1,
            foot_joints=(3,),
        )


def test_feature_dims():
    assert toy_skeleton().feature_dim == 168
    assert skeleton_22().joint_count == 22
    assert skeleton_22().feature_dim == 276
