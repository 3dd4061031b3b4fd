"""Motion frame features, packing, temporal differences, and canonicalization.

A motion sequence is a tensor of shape (T, D) with D = 12*J + 12, packing per
frame: t(3) | R(6) | theta((J-1)*6) | joints(J*3) | dt(3) | dR(6) | dJ(J*3).
Translation-like fields (t, joints) transform with rotation+translation,
difference vectors (dt, dJ) rotate only, the global orientation R rotates its
embedded columns, and parent-relative fields (theta, dR) are invariant under
a change of world frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch

from .rotations import IDENTITY_6D, relative_rotation_6d
from .skeleton import Skeleton

MOTION_SCHEMA_VERSION = 1
DEGENERATE_AXIS_NORM = 1e-6


class FrameLayout:
    """Slice map into the packed D-vector for a given joint count."""

    def __init__(self, joint_count: int):
        j = joint_count
        self.joint_count = j
        self.dim = 12 * j + 12
        o = 0
        self.t = slice(o, o + 3); o += 3
        self.rot = slice(o, o + 6); o += 6
        self.theta = slice(o, o + 6 * (j - 1)); o += 6 * (j - 1)
        self.joints = slice(o, o + 3 * j); o += 3 * j
        self.dt = slice(o, o + 3); o += 3
        self.drot = slice(o, o + 6); o += 6
        self.djoints = slice(o, o + 3 * j); o += 3 * j
        assert o == self.dim

    def joints_of(self, frames: torch.Tensor) -> torch.Tensor:
        """View of the joint-location block as (..., J, 3)."""
        return frames[..., self.joints].reshape(frames.shape[:-1] + (self.joint_count, 3))

    def theta_of(self, frames: torch.Tensor) -> torch.Tensor:
        return frames[..., self.theta].reshape(frames.shape[:-1] + (self.joint_count - 1, 6))


@dataclass
class MotionFrame:
    """Unpacked per-frame feature tuple. Tensors share the packed vector's dtype."""

    t: torch.Tensor        # (3,)
    rot: torch.Tensor      # (6,)
    theta: torch.Tensor    # (J-1, 6)
    joints: torch.Tensor   # (J, 3)
    dt: torch.Tensor       # (3,)
    drot: torch.Tensor     # (6,)
    djoints: torch.Tensor  # (J, 3)


def pack_frame(frame: MotionFrame) -> torch.Tensor:
    """Pack a MotionFrame into its D-vector (exact inverse of unpack_frame)."""
    return torch.cat(
        [
            frame.t,
            frame.rot,
            frame.theta.reshape(-1),
            frame.joints.reshape(-1),
            frame.dt,
            frame.drot,
            frame.djoints.reshape(-1),
        ]
    )


def unpack_frame(vec: torch.Tensor, layout: FrameLayout) -> MotionFrame:
    if vec.shape != (layout.dim,):
        raise ValueError(f"expected packed vector of length {layout.dim}, got {tuple(vec.shape)}")
    j = layout.joint_count
    return MotionFrame(
        t=vec[layout.t],
        rot=vec[layout.rot],
        theta=vec[layout.theta].reshape(j - 1, 6),
        joints=vec[layout.joints].reshape(j, 3),
        dt=vec[layout.dt],
        drot=vec[layout.drot],
        djoints=vec[layout.djoints].reshape(j, 3),
    )


@dataclass
class CanonicalTransform:
    """Yaw+translation mapping canonical (body-local) coordinates back to world.

    ``rotation`` columns are the canonical axes expressed in world coordinates
    (pure yaw: world +z maps to +z). ``degenerate`` flags the hips-vertically-
    aligned fallback where the axes default to the world frame.
    """

    rotation: torch.Tensor     # (3, 3)
    translation: torch.Tensor  # (3,)
    degenerate: bool = False

    def compose_point(self, p: torch.Tensor) -> torch.Tensor:
        """Canonical point -> world point, rows in the last dimension."""
        return p @ self.rotation.T + self.translation

    def inverse_point(self, p: torch.Tensor) -> torch.Tensor:
        return (p - self.translation) @ self.rotation

    def to(self, dtype: torch.dtype) -> "CanonicalTransform":
        return CanonicalTransform(
            rotation=self.rotation.to(dtype),
            translation=self.translation.to(dtype),
            degenerate=self.degenerate,
        )

    @staticmethod
    def identity(dtype: torch.dtype = torch.float32) -> "CanonicalTransform":
        return CanonicalTransform(torch.eye(3, dtype=dtype), torch.zeros(3, dtype=dtype))


def canonical_axes(left_hip: torch.Tensor, right_hip: torch.Tensor) -> tuple[torch.Tensor, bool]:
    """Column-axes matrix of the body-local frame from the two hip joints.

    x = horizontal projection of (right - left), z = world up, y = z x x.
    A degenerate horizontal projection (hips vertically aligned) falls back
    to the world axes and sets the flag instead of failing.
    """
    x = right_hip - left_hip
    x = torch.stack([x[0], x[1], torch.zeros((), dtype=x.dtype, device=x.device)])
    n = x.norm()
    if n < DEGENERATE_AXIS_NORM:
        return torch.eye(3, dtype=left_hip.dtype, device=left_hip.device), True
    x = x / n
    z = torch.zeros(3, dtype=x.dtype, device=x.device)
    z[2] = 1.0
    y = torch.cross(z, x, dim=0)
    y = y / y.norm()
    return torch.stack([x, y, z], dim=1), False


def _transform_frames(
    frames: torch.Tensor,
    layout: FrameLayout,
    rotation: torch.Tensor,
    translation: torch.Tensor,
    inverse: bool,
) -> torch.Tensor:
    """Apply a world-frame change to packed frames (rows may be batched)."""
    j = layout.joint_count
    rot_cols = rotation.T if not inverse else rotation  # right-multiplication matrix

    def points(p):
        if inverse:
            return (p - translation) @ rot_cols
        return p @ rot_cols + translation

    def directions(d):
        return d @ rot_cols

    out = frames.clone()
    out[..., layout.t] = points(frames[..., layout.t])
    out[..., layout.dt] = directions(frames[..., layout.dt])
    jp = frames[..., layout.joints].reshape(frames.shape[:-1] + (j, 3))
    out[..., layout.joints] = points(jp).reshape(frames.shape[:-1] + (3 * j,))
    dj = frames[..., layout.djoints].reshape(frames.shape[:-1] + (j, 3))
    out[..., layout.djoints] = directions(dj).reshape(frames.shape[:-1] + (3 * j,))
    # global orientation: rotate the two embedded matrix columns
    r6 = frames[..., layout.rot]
    cols = torch.stack([r6[..., 0:3], r6[..., 3:6]], dim=-2)
    cols = directions(cols)
    out[..., layout.rot] = torch.cat([cols[..., 0, :], cols[..., 1, :]], dim=-1)
    # theta and dR are parent/body-relative: unchanged
    return out


def canonicalize(
    frames: torch.Tensor, skel: Skeleton
) -> tuple[torch.Tensor, CanonicalTransform]:
    """Re-express world frames in the body-local frame of the first frame.

    Returns the transformed frames and the transform mapping them back to
    world. After this call the first frame's pelvis is at the origin and the
    hip line is horizontal along +x (unless the degenerate fallback fired).
    """
    layout = FrameLayout(skel.joint_count)
    joints0 = layout.joints_of(frames[0])
    axes, degenerate = canonical_axes(joints0[skel.left_hip], joints0[skel.right_hip])
    origin = joints0[skel.pelvis].clone()
    transform = CanonicalTransform(rotation=axes, translation=origin, degenerate=degenerate)
    local = _transform_frames(frames, layout, axes, origin, inverse=True)
    return local, transform


def decanonicalize(frames: torch.Tensor, transform: CanonicalTransform, skel: Skeleton) -> torch.Tensor:
    """Inverse of canonicalize: body-local frames back to world coordinates."""
    layout = FrameLayout(skel.joint_count)
    return _transform_frames(frames, layout, transform.rotation, transform.translation, inverse=False)


def compute_diff_features(
    frames: torch.Tensor,
    layout: FrameLayout,
    prev_frame: torch.Tensor | None = None,
) -> torch.Tensor:
    """Fill dt/dR/dJ from consecutive frames.

    ``prev_frame`` supplies the frame preceding index 0 (windows cut from a
    longer sequence); without it, frame 0 gets zero differences and an
    identity relative rotation (absolute sequence start).
    """
    if frames.ndim != 2:
        raise ValueError("expected (T, D) frames")
    out = frames.clone()
    if prev_frame is not None:
        ref = torch.cat([prev_frame.unsqueeze(0), frames], dim=0)
        prev, cur = ref[:-1], ref[1:]
        out[:, layout.dt] = cur[:, layout.t] - prev[:, layout.t]
        out[:, layout.djoints] = cur[:, layout.joints] - prev[:, layout.joints]
        out[:, layout.drot] = relative_rotation_6d(prev[:, layout.rot], cur[:, layout.rot])
    else:
        out[0, layout.dt] = 0.0
        out[0, layout.djoints] = 0.0
        out[0, layout.drot] = torch.tensor(IDENTITY_6D, dtype=frames.dtype, device=frames.device)
        if frames.shape[0] > 1:
            prev, cur = frames[:-1], frames[1:]
            out[1:, layout.dt] = cur[:, layout.t] - prev[:, layout.t]
            out[1:, layout.djoints] = cur[:, layout.joints] - prev[:, layout.joints]
            out[1:, layout.drot] = relative_rotation_6d(prev[:, layout.rot], cur[:, layout.rot])
    return out


def _transform_frames_batch(
    frames: torch.Tensor,
    layout: FrameLayout,
    rotation: torch.Tensor,
    translation: torch.Tensor,
    inverse: bool,
) -> torch.Tensor:
    """(B,T,D) frames under per-batch rotations (B,3,3) / translations (B,3)."""
    j = layout.joint_count
    rot_cols = rotation.transpose(-1, -2) if not inverse else rotation
    trans = translation[:, None, :]

    def rot_rows(flat):  # (B, N, 3) rows through the per-batch matrix
        return torch.einsum("bnj,bjk->bnk", flat, rot_cols)

    def map_points(p):  # (B, N, 3)
        if inverse:
            return rot_rows(p - trans)
        return rot_rows(p) + trans

    out = frames.clone()
    b, t = frames.shape[0], frames.shape[1]
    out[..., layout.t] = map_points(frames[..., layout.t].reshape(b, t, 3)).reshape(b, t, 3)
    out[..., layout.dt] = rot_rows(frames[..., layout.dt].reshape(b, t, 3)).reshape(b, t, 3)
    jp = frames[..., layout.joints].reshape(b, t * j, 3)
    out[..., layout.joints] = map_points(jp).reshape(b, t, 3 * j)
    dj = frames[..., layout.djoints].reshape(b, t * j, 3)
    out[..., layout.djoints] = rot_rows(dj).reshape(b, t, 3 * j)
    r6 = frames[..., layout.rot]
    cols = torch.stack([r6[..., 0:3], r6[..., 3:6]], dim=-2).reshape(b, t * 2, 3)
    cols = rot_rows(cols).reshape(b, t, 2, 3)
    out[..., layout.rot] = torch.cat([cols[..., 0, :], cols[..., 1, :]], dim=-1)
    return out


def canonicalize_batch(
    frames: torch.Tensor, skel: Skeleton
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Vectorized canonicalize over (B,T,D); returns (local, rot, trans, degenerate)."""
    layout = FrameLayout(skel.joint_count)
    joints0 = layout.joints_of(frames[:, 0])  # (B, J, 3)
    x = joints0[:, skel.right_hip] - joints0[:, skel.left_hip]
    x = torch.cat([x[:, :2], torch.zeros_like(x[:, :1])], dim=-1)
    n = x.norm(dim=-1, keepdim=True)
    degenerate = n.squeeze(-1) < DEGENERATE_AXIS_NORM
    safe_n = torch.where(n < DEGENERATE_AXIS_NORM, torch.ones_like(n), n)
    x = x / safe_n
    x = torch.where(
        degenerate.unsqueeze(-1),
        torch.tensor([1.0, 0.0, 0.0], dtype=frames.dtype, device=frames.device).expand_as(x),
        x,
    )
    z = torch.zeros_like(x)
    z[:, 2] = 1.0
    y = torch.cross(z, x, dim=-1)
    y = y / y.norm(dim=-1, keepdim=True)
    rot = torch.stack([x, y, z], dim=-1)  # columns
    trans = joints0[:, skel.pelvis]
    local = _transform_frames_batch(frames, layout, rot, trans, inverse=True)
    return local, rot, trans, degenerate


def decanonicalize_batch(
    frames: torch.Tensor, rot: torch.Tensor, trans: torch.Tensor, skel: Skeleton
) -> torch.Tensor:
    layout = FrameLayout(skel.joint_count)
    return _transform_frames_batch(frames, layout, rot, trans, inverse=False)


@dataclass
class MotionPrimitive:
    """Canonical H+F window: the atomic unit of generation."""

    frames: torch.Tensor  # (H+F, D), canonical
    history_len: int
    future_len: int
    label_id: int
    transform: CanonicalTransform
    canonical: bool = True

    @property
    def history(self) -> torch.Tensor:
        return self.frames[: self.history_len]

    @property
    def future(self) -> torch.Tensor:
        return self.frames[self.history_len:]

    def to(self, dtype: torch.dtype) -> "MotionPrimitive":
        return MotionPrimitive(
            frames=self.frames.to(dtype),
            history_len=self.history_len,
            future_len=self.future_len,
            label_id=self.label_id,
            transform=self.transform.to(dtype),
            canonical=self.canonical,
        )


def canonicalize_primitive(
    world_frames: torch.Tensor,
    skel: Skeleton,
    history_len: int,
    future_len: int,
    label_id: int,
) -> MotionPrimitive:
    if world_frames.shape[0] != history_len + future_len:
        raise ValueError(
            f"expected {history_len + future_len} frames, got {world_frames.shape[0]}"
        )
    local, transform = canonicalize(world_frames, skel)
    return MotionPrimitive(
        frames=local,
        history_len=history_len,
        future_len=future_len,
        label_id=label_id,
        transform=transform,
    )


def frames_from_parts(
    skel: Skeleton,
    t: torch.Tensor,
    rot: torch.Tensor,
    theta: torch.Tensor,
    joints: torch.Tensor,
) -> torch.Tensor:
    """Assemble (T, D) frames from per-field tensors, differences left zero."""
    T = t.shape[0]
    layout = FrameLayout(skel.joint_count)
    frames = torch.zeros(T, layout.dim, dtype=t.dtype, device=t.device)
    frames[:, layout.t] = t
    frames[:, layout.rot] = rot
    frames[:, layout.theta] = theta.reshape(T, -1)
    frames[:, layout.joints] = joints.reshape(T, -1)
    return frames


# ---------------------------------------------------------------------------
# Motion file format: JSON header, NUL separator, float32 little-endian block.
# ---------------------------------------------------------------------------

def save_motion(
    path,
    frames: torch.Tensor,
    fps: float,
    joint_count: int,
    label_track: list[tuple[int, int, int]] | None = None,
) -> None:
    layout = FrameLayout(joint_count)
    if frames.shape[-1] != layout.dim:
        raise ValueError(f"frames dim {frames.shape[-1]} != {layout.dim} for J={joint_count}")
    header = {
        "schema_version": MOTION_SCHEMA_VERSION,
        "fps": fps,
        "joint_count": joint_count,
        "label_track": [list(seg) for seg in (label_track or [])],
    }
    payload = np.ascontiguousarray(
        frames.detach().cpu().numpy().astype("<f4")
    ).tobytes()
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\0")
        f.write(payload)


def load_motion(path) -> tuple[torch.Tensor, dict]:
    with open(path, "rb") as f:
        blob = f.read()
    sep = blob.index(b"\0")
    header = json.loads(blob[:sep].decode("utf-8"))
    if header.get("schema_version") != MOTION_SCHEMA_VERSION:
        raise ValueError(f"unsupported motion schema {header.get('schema_version')}")
    dim = FrameLayout(header["joint_count"]).dim
    raw = np.frombuffer(blob[sep + 1:], dtype="<f4")
    if raw.size % dim != 0:
        raise ValueError("frame block size is not a multiple of the frame dimension")
    frames = torch.from_numpy(raw.reshape(-1, dim).copy())
    header["label_track"] = [tuple(seg) for seg in header.get("label_track", [])]
    return frames, header
