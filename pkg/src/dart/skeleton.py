"""Rigid skeleton definition and differentiable forward kinematics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .rotations import rot6d_to_matrix

ROOT_SENTINEL = -1


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree with rest offsets in meters.

    Joints are stored in topological order: ``parent[i] < i`` for all i > 0
    and the pelvis is joint 0 (the root). ``rest_offsets[i]`` is the bone
    vector from parent to joint i in the rest pose; the root offset is unused.
    """

    name: str
    parent: tuple[int, ...]
    rest_offsets: np.ndarray  # (J, 3) float64
    joint_names: tuple[str, ...]
    left_hip: int
    right_hip: int
    foot_joints: tuple[int, ...]
    pelvis: int = 0

    def __post_init__(self):
        j = self.joint_count
        if j < 4:
            raise ValueError(f"skeleton needs at least 4 joints, got {j}")
        if self.parent[0] != ROOT_SENTINEL:
            raise ValueError("joint 0 must be the root")
        for i in range(1, j):
            if not 0 <= self.parent[i] < i:
                raise ValueError(f"parent[{i}]={self.parent[i]} breaks topological order")
        if self.left_hip == self.right_hip:
            raise ValueError("left and right hip must differ")
        if self.rest_offsets.shape != (j, 3):
            raise ValueError(f"rest_offsets must be ({j}, 3)")
        if not np.isfinite(self.rest_offsets).all():
            raise ValueError("rest_offsets must be finite")
        object.__setattr__(self, "rest_offsets", np.ascontiguousarray(self.rest_offsets, dtype=np.float64))

    @property
    def joint_count(self) -> int:
        return len(self.parent)

    @property
    def feature_dim(self) -> int:
        # t(3) + R(6) + theta((J-1)*6) + joints(J*3) + dt(3) + dR(6) + dJ(J*3)
        return 12 * self.joint_count + 12

    def offsets_tensor(self, dtype: torch.dtype = torch.float32, device=None) -> torch.Tensor:
        return torch.as_tensor(self.rest_offsets, dtype=dtype, device=device)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "parent": list(self.parent),
            "rest_offsets": self.rest_offsets.tolist(),
            "joint_names": list(self.joint_names),
            "left_hip": self.left_hip,
            "right_hip": self.right_hip,
            "foot_joints": list(self.foot_joints),
        }

    @staticmethod
    def from_dict(d: dict) -> "Skeleton":
        return Skeleton(
            name=d["name"],
            parent=tuple(d["parent"]),
            rest_offsets=np.asarray(d["rest_offsets"], dtype=np.float64),
            joint_names=tuple(d["joint_names"]),
            left_hip=d["left_hip"],
            right_hip=d["right_hip"],
            foot_joints=tuple(d["foot_joints"]),
        )


def toy_skeleton() -> Skeleton:
    """13-joint desk-scale skeleton (D=168), z-up, character facing +y.

    Leg segments 0.40 m each so a straight leg spans 0.80 m below the hip;
    the pelvis rides ~0.86 m over the floor in the synthesized gaits.
    """
    names = (
        "pelvis", "spine", "head",
        "l_hip", "l_knee", "l_ankle",
        "r_hip", "r_knee", "r_ankle",
        "l_shoulder", "l_elbow",
        "r_shoulder", "r_elbow",
    )
    parent = (ROOT_SENTINEL, 0, 1, 0, 3, 4, 0, 6, 7, 1, 9, 1, 11)
    offsets = np.array(
        [
            [0.00, 0.0, 0.00],   # pelvis (root)
            [0.00, 0.0, 0.25],   # spine
            [0.00, 0.0, 0.35],   # head
            [-0.10, 0.0, -0.06], # l_hip
            [0.00, 0.0, -0.40],  # l_knee
            [0.00, 0.0, -0.40],  # l_ankle
            [0.10, 0.0, -0.06],  # r_hip
            [0.00, 0.0, -0.40],  # r_knee
            [0.00, 0.0, -0.40],  # r_ankle
            [-0.20, 0.0, 0.20],  # l_shoulder
            [0.00, 0.0, -0.30],  # l_elbow
            [0.20, 0.0, 0.20],   # r_shoulder
            [0.00, 0.0, -0.30],  # r_elbow
        ]
    )
    return Skeleton(
        name="toy13",
        parent=parent,
        rest_offsets=offsets,
        joint_names=names,
        left_hip=3,
        right_hip=6,
        foot_joints=(5, 8),
    )


def skeleton_22() -> Skeleton:
    """22-joint variant (D=276); used to validate the packed feature dimension."""
    base = toy_skeleton()
    names = list(base.joint_names)
    parent = list(base.parent)
    offsets = list(base.rest_offsets)
    # extend: neck, l/r toes, l/r wrists, l/r collar, chest, belly
    extra = [
        ("belly", 1, [0.0, 0.0, 0.12]),
        ("chest", 13, [0.0, 0.0, 0.12]),
        ("neck", 14, [0.0, 0.0, 0.10]),
        ("l_toe", 5, [0.0, 0.12, -0.03]),
        ("r_toe", 8, [0.0, 0.12, -0.03]),
        ("l_wrist", 10, [0.0, 0.0, -0.25]),
        ("r_wrist", 12, [0.0, 0.0, -0.25]),
        ("l_collar", 14, [-0.08, 0.0, 0.05]),
        ("r_collar", 14, [0.08, 0.0, 0.05]),
    ]
    for name, par, off in extra:
        names.append(name)
        parent.append(par)
        offsets.append(np.array(off))
    return Skeleton(
        name="toy22",
        parent=tuple(parent),
        rest_offsets=np.stack(offsets),
        joint_names=tuple(names),
        left_hip=3,
        right_hip=6,
        foot_joints=(5, 8, 16, 17),
    )


def forward_kinematics(
    skel: Skeleton,
    t: torch.Tensor,
    root_rot6d: torch.Tensor,
    theta: torch.Tensor,
) -> torch.Tensor:
    """Joint world positions from root translation/orientation and local rotations.

    ``t`` (..., 3), ``root_rot6d`` (..., 6), ``theta`` (..., J-1, 6); returns
    (..., J, 3). The root sits exactly at ``t``; each child is placed at its
    parent plus the parent-chain rotation applied to the rest offset.
    Differentiable end to end.
    """
    j = skel.joint_count
    if theta.shape[-2:] != (j - 1, 6):
        raise ValueError(f"theta must be (..., {j - 1}, 6), got {tuple(theta.shape)}")
    offsets = skel.offsets_tensor(dtype=t.dtype, device=t.device)
    root_mat = rot6d_to_matrix(root_rot6d)
    local_mats = rot6d_to_matrix(theta)  # (..., J-1, 3, 3)

    positions: list[torch.Tensor] = [t]
    global_mats: list[torch.Tensor] = [root_mat]
    for i in range(1, j):
        p = skel.parent[i]
        parent_mat = global_mats[p]
        pos = positions[p] + parent_mat @ offsets[i]
        positions.append(pos)
        global_mats.append(parent_mat @ local_mats[..., i - 1, :, :])
    return torch.stack(positions, dim=-2)
