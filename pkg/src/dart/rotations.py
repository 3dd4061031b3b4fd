"""Continuous 6D rotation parameterization and small rotation utilities.

A rotation is stored as the first two columns of its matrix, flattened to 6
numbers ``[m00, m10, m20, m01, m11, m21]``. Gram-Schmidt recovers the full
orthonormal matrix with determinant +1. All functions are torch ops, support
arbitrary leading batch dimensions, and preserve the input dtype so they can
run in float64 for gradient checks.
"""

from __future__ import annotations

import torch

IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

_MIN_COLUMN_NORM = 1e-8


class InvalidRotationError(ValueError):
    """Raised when an input cannot represent a rotation."""


def rot6d_to_matrix(r: torch.Tensor, check: bool = False) -> torch.Tensor:
    """Recover a rotation matrix from 6D parameters via Gram-Schmidt.

    ``r`` has shape (..., 6) holding two 3-vectors (the first two matrix
    columns). The first column is normalized, the second orthogonalized
    against it, the third is their cross product.

    With ``check=True`` degenerate inputs (near-zero or parallel columns)
    raise :class:`InvalidRotationError`; the checked path is for validating
    external data and is not differentiable-safe at the degenerate boundary.
    """
    if r.shape[-1] != 6:
        raise InvalidRotationError(f"expected trailing dim 6, got {tuple(r.shape)}")
    a = r[..., 0:3]
    b = r[..., 3:6]
    if check:
        if (a.norm(dim=-1) < _MIN_COLUMN_NORM).any() or (b.norm(dim=-1) < _MIN_COLUMN_NORM).any():
            raise InvalidRotationError("near-zero column in 6D rotation input")
    x = torch.nn.functional.normalize(a, dim=-1, eps=_MIN_COLUMN_NORM)
    b_perp = b - (x * b).sum(dim=-1, keepdim=True) * x
    if check and (b_perp.norm(dim=-1) < _MIN_COLUMN_NORM).any():
        raise InvalidRotationError("parallel columns in 6D rotation input")
    y = torch.nn.functional.normalize(b_perp, dim=-1, eps=_MIN_COLUMN_NORM)
    z = torch.cross(x, y, dim=-1)
    return torch.stack((x, y, z), dim=-1)


def matrix_to_rot6d(m: torch.Tensor, check: bool = False) -> torch.Tensor:
    """Drop the third column of a rotation matrix, flattening to (..., 6).

    With ``check=True``, inputs farther than 1e-4 from orthonormal raise
    :class:`InvalidRotationError`.
    """
    if m.shape[-2:] != (3, 3):
        raise InvalidRotationError(f"expected trailing shape (3,3), got {tuple(m.shape)}")
    if check:
        eye = torch.eye(3, dtype=m.dtype, device=m.device)
        err = (m.transpose(-1, -2) @ m - eye).abs().amax()
        if err > 1e-4:
            raise InvalidRotationError(f"matrix not orthonormal (max deviation {err:.2e})")
    return m[..., :2].transpose(-1, -2).reshape(m.shape[:-2] + (6,))


def relative_rotation_6d(r_prev: torch.Tensor, r_cur: torch.Tensor) -> torch.Tensor:
    """Body-relative rotation prev->cur as 6D: rot6d(M_prev^T @ M_cur)."""
    m_prev = rot6d_to_matrix(r_prev)
    m_cur = rot6d_to_matrix(r_cur)
    return matrix_to_rot6d(m_prev.transpose(-1, -2) @ m_cur)


def yaw_matrix(angle: torch.Tensor | float, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Rotation about +z by ``angle`` (radians); supports batched angles."""
    if not torch.is_tensor(angle):
        angle = torch.tensor(angle, dtype=dtype)
    c, s = torch.cos(angle), torch.sin(angle)
    zero = torch.zeros_like(c)
    one = torch.ones_like(c)
    rows = torch.stack(
        (
            torch.stack((c, -s, zero), dim=-1),
            torch.stack((s, c, zero), dim=-1),
            torch.stack((zero, zero, one), dim=-1),
        ),
        dim=-2,
    )
    return rows


def random_rotation_matrix(generator: torch.Generator, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Uniform-ish random rotation from QR of a Gaussian matrix, det forced to +1."""
    g = torch.randn(3, 3, generator=generator, dtype=dtype)
    q, r = torch.linalg.qr(g)
    q = q * torch.sign(torch.diagonal(r)).unsqueeze(0)
    if torch.det(q) < 0:
        q = q.clone()
        q[:, 2] = -q[:, 2]
    return q
