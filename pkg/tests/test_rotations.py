import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dart.rotations import (
    InvalidRotationError,
    matrix_to_rot6d,
    random_rotation_matrix,
    relative_rotation_6d,
    rot6d_to_matrix,
    yaw_matrix,
)


def test_identity_6d_gives_identity_matrix():
    r = torch.tensor([1.0, 0, 0, 0, 1, 0], dtype=torch.float64)
    assert torch.allclose(rot6d_to_matrix(r), torch.eye(3, dtype=torch.float64))


def test_90_degree_yaw_6d():
    # columns (0,1,0) and (-1,0,0): 90 degrees about z, third column (0,0,1)
    r = torch.tensor([0.0, 1, 0, -1, 0, 0], dtype=torch.float64)
    m = rot6d_to_matrix(r)
    expected = torch.tensor([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=torch.float64)
    assert torch.allclose(m, expected, atol=1e-12)


def test_gram_schmidt_unnormalized_input():
    # first col (2,0,0) normalizes to (1,0,0); (1,1,0) orthogonalizes to (0,1,0)
    r = torch.tensor([2.0, 0, 0, 1, 1, 0], dtype=torch.float64)
    assert torch.allclose(rot6d_to_matrix(r), torch.eye(3, dtype=torch.float64), atol=1e-12)


def test_matrix_to_rot6d_identity():
    r = matrix_to_rot6d(torch.eye(3, dtype=torch.float64))
    assert torch.allclose(r, torch.tensor([1.0, 0, 0, 0, 1, 0], dtype=torch.float64))


def test_matrix_to_rot6d_yaw_readoff():
    m = yaw_matrix(math.pi / 2, dtype=torch.float64)
    assert torch.allclose(
        matrix_to_rot6d(m), torch.tensor([0.0, 1, 0, -1, 0, 0], dtype=torch.float64), atol=1e-12
    )


def test_round_trip_random_rotations():
    gen = torch.Generator().manual_seed(7)
    worst = 0.0
    for _ in range(1000):
        m = random_rotation_matrix(gen)
        m2 = rot6d_to_matrix(matrix_to_rot6d(m))
        worst = max(worst, float((m - m2).abs().max()))
    assert worst < 1e-6


def test_degenerate_inputs_raise():
    with pytest.raises(InvalidRotationError):
        rot6d_to_matrix(torch.tensor([0.0, 0, 0, 0, 1, 0]), check=True)
    with pytest.raises(InvalidRotationError):
        rot6d_to_matrix(torch.tensor([1.0, 0, 0, 2, 0, 0]), check=True)
    with pytest.raises(InvalidRotationError):
        matrix_to_rot6d(torch.full((3, 3), 0.5), check=True)


def test_relative_rotation_is_body_relative():
    gen = torch.Generator().manual_seed(3)
    prev = matrix_to_rot6d(random_rotation_matrix(gen))
    step = yaw_matrix(0.3, dtype=torch.float64)
    cur = matrix_to_rot6d(rot6d_to_matrix(prev) @ step)
    rel = rot6d_to_matrix(relative_rotation_6d(prev, cur))
    assert torch.allclose(rel, step, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(min_value=-2.0, max_value=2.0), min_size=6, max_size=6),
)
def test_recovered_matrix_is_orthonormal(values):
    r = torch.tensor(values, dtype=torch.float64)
    a, b = r[:3], r[3:]
    # avoid the genuinely degenerate region the contract excludes
    if a.norm() < 1e-3 or b.norm() < 1e-3:
        return
    cross = torch.cross(a / a.norm(), b / b.norm(), dim=0)
    if cross.norm() < 1e-3:
        return
    m = rot6d_to_matrix(r)
    eye = torch.eye(3, dtype=torch.float64)
    assert torch.allclose(m.T @ m, eye, atol=1e-9)
    assert torch.det(m) > 0.999
