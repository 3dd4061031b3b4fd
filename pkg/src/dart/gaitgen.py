"""Procedural generator of labeled skeletal motion and the primitive sampler.

Clips are synthesized at 30 fps from a small parametric gait model: the root
follows a straight or arcing path, legs swing sinusoidally with the swing
amplitude matched to speed/cadence (so the stance foot is close to
world-stationary at mid-stance), and a per-clip vertical shift drops the
lowest foot onto the floor. Everything is a deterministic function of the
spec, so identical seeds give bit-identical data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .frames import (
    FrameLayout,
    MotionPrimitive,
    canonicalize_primitive,
    compute_diff_features,
    frames_from_parts,
    load_motion,
    save_motion,
)
from .rotations import yaw_matrix, matrix_to_rot6d
from .skeleton import Skeleton, forward_kinematics, toy_skeleton

FPS = 30.0
HISTORY_LEN = 2
FUTURE_LEN = 8

LABELS = ("stand", "walk", "run", "hop_left", "turn_left", "turn_right", "sit")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}
NULL_LABEL_ID = len(LABELS)  # reserved classifier-free-guidance null token
FLOOR_CLEARANCE = 0.002  # lowest foot height after the drop-to-floor pass


@dataclass(frozen=True)
class LimbAmplitudes:
    """Radians unless noted. ``leg_swing=None`` derives the swing from
    speed/cadence so the stance foot is near-stationary."""

    leg_swing: float | None = None
    knee_lift: float = 0.6
    arm_swing: float = 0.25
    bounce: float = 0.025   # meters, root vertical bob
    sway: float = 0.003     # meters, idle drift for stand/sit


@dataclass(frozen=True)
class GaitSpec:
    """``wander_*`` drive smooth seeded random drift of heading and speed
    inside a clip, so short history windows genuinely underdetermine the
    future (zero by default: the trajectory is then exactly the closed-form
    path model)."""

    label: str
    speed: float = 0.0
    cadence: float = 1.0
    turn_rate: float = 0.0
    wander_turn: float = 0.0   # rad/s, stationary std of the heading-rate drift
    wander_speed: float = 0.0  # fraction, stationary std of the speed drift
    amplitudes: LimbAmplitudes = field(default_factory=LimbAmplitudes)
    seed: int = 0

    def __post_init__(self):
        if self.label not in LABEL_IDS:
            raise ValueError(f"unknown label {self.label!r}; known: {LABELS}")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if self.label in ("walk", "run", "hop_left", "turn_left", "turn_right") and self.cadence <= 0:
            raise ValueError("cadence must be > 0 for locomotion labels")

    @property
    def label_id(self) -> int:
        return LABEL_IDS[self.label]


def _rotx_6d(angle: np.ndarray) -> np.ndarray:
    """6D form of a rotation about +x, vectorized over angle."""
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (6,))
    out[..., 0] = 1.0
    out[..., 4] = c
    out[..., 5] = s
    return out


def _leg_swing_amplitude(spec: GaitSpec, leg_length: float, speed) -> np.ndarray | float:
    """Swing amplitude matched to (possibly per-frame) ground speed so the
    stance foot is near-stationary at mid-stance."""
    if spec.amplitudes.leg_swing is not None:
        return spec.amplitudes.leg_swing
    if spec.cadence <= 0:
        return 0.0
    return speed / (leg_length * 2.0 * math.pi * spec.cadence)


def _ou_profile(rng: np.random.Generator, n: int, std: float, tau_s: float = 0.7) -> np.ndarray:
    """Zero-mean Ornstein-Uhlenbeck drift at 30 fps with stationary std ``std``."""
    if std <= 0.0:
        return np.zeros(n)
    dt = 1.0 / FPS
    theta = 1.0 / tau_s
    x = np.zeros(n)
    x[0] = std * rng.standard_normal()
    drive = std * math.sqrt(2.0 * theta * dt) * rng.standard_normal(n - 1) if n > 1 else np.zeros(0)
    for k in range(1, n):
        x[k] = x[k - 1] * (1.0 - theta * dt) + drive[k - 1]
    return x


def synthesize_clip(
    spec: GaitSpec, n_frames: int, skel: Skeleton | None = None
) -> torch.Tensor:
    """World-coordinate motion (n_frames, D) float32 at 30 fps."""
    if n_frames < HISTORY_LEN + FUTURE_LEN:
        raise ValueError(f"need at least {HISTORY_LEN + FUTURE_LEN} frames, got {n_frames}")
    skel = skel or toy_skeleton()
    j = skel.joint_count
    rng = np.random.default_rng(spec.seed)
    phase0 = rng.uniform(0.0, 2.0 * math.pi)
    sway_phase = rng.uniform(0.0, 2.0 * math.pi)

    k = np.arange(n_frames, dtype=np.float64)
    tt = k / FPS
    phase = 2.0 * math.pi * spec.cadence * tt + phase0

    # seeded smooth drift makes the future underdetermined by short histories
    turn_profile = spec.turn_rate + _ou_profile(rng, n_frames, spec.wander_turn)
    base_speed = spec.speed * np.clip(1.0 + _ou_profile(rng, n_frames, spec.wander_speed), 0.2, 2.0)
    heading = np.zeros(n_frames)
    if n_frames > 1:
        heading[1:] = np.cumsum(turn_profile[:-1]) / FPS

    # root path: Euler steps along the heading at the start of each step;
    # hopping advances only while airborne so the planted foot does not slide
    speed_profile = base_speed
    if spec.label == "hop_left" and spec.speed > 0:
        gate = np.clip((1.0 - np.cos(phase)) / 2.0 - 0.3, 0.0, None)
        mean_gate = gate.mean()
        if mean_gate > 1e-9:
            speed_profile = base_speed * gate / mean_gate
    step_dir = np.stack([-np.sin(heading), np.cos(heading)], axis=-1)
    xy = np.zeros((n_frames, 2))
    if n_frames > 1:
        xy[1:] = np.cumsum(step_dir[:-1] * (speed_profile[:-1, None] / FPS), axis=0)

    leg_length = float(-skel.rest_offsets[4, 2] - skel.rest_offsets[5, 2])
    hip_drop = float(-skel.rest_offsets[3, 2])
    base_height = hip_drop + leg_length  # straight stance leg touches z=0
    amp = spec.amplitudes
    swing = _leg_swing_amplitude(spec, leg_length, speed_profile)

    hip_l = np.zeros(n_frames)
    hip_r = np.zeros(n_frames)
    knee_l = np.zeros(n_frames)
    knee_r = np.zeros(n_frames)
    arm_l = np.zeros(n_frames)
    arm_r = np.zeros(n_frames)
    root_z = np.full(n_frames, base_height)

    if spec.label in ("walk", "run", "turn_left", "turn_right"):
        hip_l = swing * np.sin(phase)
        hip_r = swing * np.sin(phase + math.pi)
        # knees bend while the leg swings forward (cos > 0), lifting the foot
        knee_l = -amp.knee_lift * np.clip(np.cos(phase), 0.0, None)
        knee_r = -amp.knee_lift * np.clip(np.cos(phase + math.pi), 0.0, None)
        arm_l = amp.arm_swing * np.sin(phase + math.pi)
        arm_r = amp.arm_swing * np.sin(phase)
        # pelvis dips at mid-stance so floor contact concentrates where the
        # stance foot's backward swing speed matches the ground speed
        root_z = base_height - amp.bounce * np.cos(2.0 * phase)
    elif spec.label == "hop_left":
        # stand on the straight left leg, right foot held up, root bouncing
        knee_r = np.full(n_frames, -1.0)
        hip_r = np.full(n_frames, 0.35)
        bounce = max(amp.bounce, 0.04)
        root_z = base_height + bounce * (0.5 - 0.5 * np.cos(phase))
        arm_l = arm_r = 0.15 * np.sin(phase)
    elif spec.label == "sit":
        hip_l = hip_r = np.full(n_frames, math.pi / 2.0)
        knee_l = knee_r = np.full(n_frames, -math.pi / 2.0)
        root_z = np.full(n_frames, hip_drop + leg_length / 2.0 + 0.02)
    # stand: all zeros

    if spec.label in ("stand", "sit"):
        xy = xy + amp.sway * np.stack(
            [np.sin(0.3 * 2 * math.pi * tt + sway_phase), np.sin(0.23 * 2 * math.pi * tt)],
            axis=-1,
        )

    theta = np.zeros((n_frames, j - 1, 6))
    theta[..., 0] = 1.0
    theta[..., 4] = 1.0  # identity 6d everywhere by default
    theta[:, skel.joint_names.index("l_hip") - 1] = _rotx_6d(hip_l)
    theta[:, skel.joint_names.index("l_knee") - 1] = _rotx_6d(knee_l)
    theta[:, skel.joint_names.index("r_hip") - 1] = _rotx_6d(hip_r)
    theta[:, skel.joint_names.index("r_knee") - 1] = _rotx_6d(knee_r)
    theta[:, skel.joint_names.index("l_shoulder") - 1] = _rotx_6d(arm_l + 0.1)
    theta[:, skel.joint_names.index("r_shoulder") - 1] = _rotx_6d(arm_r + 0.1)
    theta[:, skel.joint_names.index("l_elbow") - 1] = _rotx_6d(np.full(n_frames, -0.2))
    theta[:, skel.joint_names.index("r_elbow") - 1] = _rotx_6d(np.full(n_frames, -0.2))

    t = torch.from_numpy(np.concatenate([xy, root_z[:, None]], axis=-1))
    rot = matrix_to_rot6d(yaw_matrix(torch.from_numpy(heading), dtype=torch.float64))
    theta_t = torch.from_numpy(theta)
    joints = forward_kinematics(skel, t, rot, theta_t)

    # drop the clip so the lowest foot grazes the floor
    foot_z = joints[:, list(skel.foot_joints), 2]
    shift = float(foot_z.min()) - FLOOR_CLEARANCE
    t = t - torch.tensor([0.0, 0.0, shift], dtype=torch.float64)
    joints = joints - torch.tensor([0.0, 0.0, shift], dtype=torch.float64)

    frames = frames_from_parts(skel, t, rot, theta_t, joints)
    frames = compute_diff_features(frames, FrameLayout(j))
    return frames.to(torch.float32)


def synthesize_transition(
    spec_a: GaitSpec,
    spec_b: GaitSpec,
    frames_a: int,
    frames_b: int,
    blend_frames: int = 15,
    skel: Skeleton | None = None,
) -> tuple[torch.Tensor, list[tuple[int, int, int]]]:
    """Two gaits eased into each other; returns frames and the label track.

    The underlying pose model is parametric, so blending the two clips'
    features over a short window produces a kinematically smooth seam. The
    second clip is re-anchored at the first clip's final root transform.
    """
    skel = skel or toy_skeleton()
    layout = FrameLayout(skel.joint_count)
    total = frames_a + frames_b
    a = synthesize_clip(spec_a, frames_a + blend_frames, skel).to(torch.float64)
    b = synthesize_clip(spec_b, frames_b + blend_frames, skel).to(torch.float64)

    # re-anchor clip b at the end pose of clip a (yaw + planar translation)
    from .frames import canonicalize, decanonicalize  # local to avoid cycle at import

    _, tail_tf = canonicalize(a[frames_a - 1:], skel)
    b_local, _ = canonicalize(b, skel)
    b_world = decanonicalize(b_local, tail_tf, skel)

    out = torch.zeros(total, layout.dim, dtype=torch.float64)
    out[:frames_a] = a[:frames_a]
    out[frames_a:] = b_world[blend_frames: blend_frames + frames_b]
    w = torch.linspace(0.0, 1.0, blend_frames, dtype=torch.float64).unsqueeze(-1)
    seam_a = a[frames_a: frames_a + blend_frames]
    seam_b = b_world[:blend_frames]
    blended = (1.0 - w) * seam_a + w * seam_b
    n_tail = min(blend_frames, frames_b)
    out[frames_a: frames_a + n_tail] = blended[:n_tail]
    out = compute_diff_features(out, layout)
    track = [(spec_a.label_id, 0, frames_a), (spec_b.label_id, frames_a, total)]
    return out.to(torch.float32), track


@dataclass
class Clip:
    frames: torch.Tensor  # (T, D) float32, world
    label_track: list[tuple[int, int, int]]  # (label_id, start, end) half-open
    spec_labels: list[str]

    def labels_overlapping(self, start: int, end: int) -> list[int]:
        return [lid for lid, s, e in self.label_track if s < end and e > start]


@dataclass
class PrimitiveDataset:
    skeleton: Skeleton
    clips: list[Clip]
    history_len: int = HISTORY_LEN
    future_len: int = FUTURE_LEN
    fps: float = FPS

    def __post_init__(self):
        self.layout = FrameLayout(self.skeleton.joint_count)
        self.window_len = self.history_len + self.future_len
        # (clip, start, label) triples; a window near a boundary appears once
        # per overlapping label
        self.windows: list[tuple[int, int, int]] = []
        self.windows_by_label: dict[int, list[tuple[int, int]]] = {}
        for ci, clip in enumerate(self.clips):
            t = clip.frames.shape[0]
            for s in range(0, t - self.window_len + 1):
                for lid in clip.labels_overlapping(s, s + self.window_len):
                    self.windows.append((ci, s, lid))
                    self.windows_by_label.setdefault(lid, []).append((ci, s))
        self.label_histogram = {
            lid: len(v) for lid, v in sorted(self.windows_by_label.items())
        }

    @property
    def window_count(self) -> int:
        # distinct (clip, start) pairs regardless of label multiplicity
        return len({(c, s) for c, s, _ in self.windows})

    def primitive_at(self, clip_idx: int, start: int, label_id: int) -> MotionPrimitive:
        clip = self.clips[clip_idx]
        window = clip.frames[start: start + self.window_len].to(torch.float64)
        if start > 0:
            window = compute_diff_features(
                window, self.layout, prev_frame=clip.frames[start - 1].to(torch.float64)
            )
        prim = canonicalize_primitive(
            window, self.skeleton, self.history_len, self.future_len, label_id
        )
        return prim.to(torch.float32)

    def feature_norm_percentile(self, q: float = 99.0) -> float:
        norms = [clip.frames.norm(dim=-1) for clip in self.clips]
        return float(np.percentile(torch.cat(norms).numpy(), q))


def build_dataset(
    specs: list[GaitSpec],
    frames_per_clip: int = 240,
    skel: Skeleton | None = None,
    transitions: list[tuple[GaitSpec, GaitSpec]] | None = None,
) -> PrimitiveDataset:
    if not specs:
        raise ValueError("spec list must be non-empty")
    skel = skel or toy_skeleton()
    clips = []
    for spec in specs:
        frames = synthesize_clip(spec, frames_per_clip, skel)
        clips.append(
            Clip(
                frames=frames,
                label_track=[(spec.label_id, 0, frames_per_clip)],
                spec_labels=[spec.label],
            )
        )
    for spec_a, spec_b in transitions or []:
        half = frames_per_clip // 2
        frames, track = synthesize_transition(spec_a, spec_b, half, half, skel=skel)
        clips.append(Clip(frames=frames, label_track=track, spec_labels=[spec_a.label, spec_b.label]))
    return PrimitiveDataset(skeleton=skel, clips=clips)


def sample_batch(
    ds: PrimitiveDataset,
    batch_size: int,
    rng: np.random.Generator,
    balanced: bool = True,
) -> list[MotionPrimitive]:
    """Canonical primitives with labels; balanced draws equalize label frequency."""
    if not ds.windows:
        raise ValueError("dataset has no windows")
    prims = []
    labels = sorted(ds.windows_by_label)
    for _ in range(batch_size):
        if balanced:
            lid = labels[rng.integers(len(labels))]
            ci, s = ds.windows_by_label[lid][rng.integers(len(ds.windows_by_label[lid]))]
        else:
            ci, s, lid = ds.windows[rng.integers(len(ds.windows))]
        prims.append(ds.primitive_at(ci, s, lid))
    return prims


@dataclass
class ConsecutiveSample:
    """A world-coordinate run of N contiguous primitives plus their labels."""

    world: torch.Tensor  # (H + N*F, D) float64
    labels: list[int]
    dataset: PrimitiveDataset

    @property
    def n_rollouts(self) -> int:
        return len(self.labels)

    def primitive(self, i: int) -> MotionPrimitive:
        """Canonical primitive i (0-based); history ties to primitive i-1."""
        h, f = self.dataset.history_len, self.dataset.future_len
        lo = i * f
        return canonicalize_primitive(
            self.world[lo: lo + h + f], self.dataset.skeleton, h, f, self.labels[i]
        )


def sample_consecutive(
    ds: PrimitiveDataset, n_rollouts: int, rng: np.random.Generator
) -> ConsecutiveSample:
    h, f = ds.history_len, ds.future_len
    span = h + n_rollouts * f
    eligible = [
        (ci, clip.frames.shape[0] - span + 1)
        for ci, clip in enumerate(ds.clips)
        if clip.frames.shape[0] >= span
    ]
    if not eligible:
        raise ValueError(f"no clip long enough for {n_rollouts} rollouts (need {span} frames)")
    weights = np.array([n for _, n in eligible], dtype=np.float64)
    pick = rng.choice(len(eligible), p=weights / weights.sum())
    ci, n_starts = eligible[pick]
    start = int(rng.integers(n_starts))
    clip = ds.clips[ci]
    window = clip.frames[start: start + span].to(torch.float64)
    if start > 0:
        window = compute_diff_features(
            window, ds.layout, prev_frame=clip.frames[start - 1].to(torch.float64)
        )
    labels = []
    for i in range(n_rollouts):
        win_lo = start + i * f
        overlapping = clip.labels_overlapping(win_lo, win_lo + h + f)
        labels.append(int(overlapping[rng.integers(len(overlapping))]))
    return ConsecutiveSample(world=window, labels=labels, dataset=ds)


def default_specs(base_seed: int = 0) -> list[GaitSpec]:
    """Desk-scale training corpus: varied speeds / turn rates per label, with
    in-clip heading and speed drift so futures are not readable off two
    history frames."""
    specs = []
    seed = base_seed
    for speed in (0.8, 1.0, 1.2):
        for turn in (-0.5, -0.25, 0.0, 0.25, 0.5):
            specs.append(GaitSpec(
                "walk", speed=speed, cadence=0.9, turn_rate=turn,
                wander_turn=0.5, wander_speed=0.15, seed=seed,
            ))
            seed += 1
    for speed in (1.8, 2.2):
        for turn in (-0.4, 0.0, 0.4):
            specs.append(GaitSpec(
                "run", speed=speed, cadence=1.4, turn_rate=turn,
                wander_turn=0.4, wander_speed=0.15, seed=seed,
            ))
            seed += 1
    for turn in (-0.3, 0.0, 0.3):
        specs.append(GaitSpec(
            "hop_left", speed=0.4, cadence=1.8, turn_rate=turn,
            wander_turn=0.3, wander_speed=0.2, seed=seed,
        ))
        seed += 1
    for turn in (0.9, 1.2):
        specs.append(GaitSpec("turn_left", speed=0.4, cadence=0.9, turn_rate=turn,
                              wander_turn=0.3, wander_speed=0.1, seed=seed))
        seed += 1
        specs.append(GaitSpec("turn_right", speed=0.4, cadence=0.9, turn_rate=-turn,
                              wander_turn=0.3, wander_speed=0.1, seed=seed))
        seed += 1
    for _ in range(3):
        specs.append(GaitSpec("stand", seed=seed)); seed += 1
        specs.append(GaitSpec("sit", seed=seed)); seed += 1
    return specs


def default_transitions(specs: list[GaitSpec]) -> list[tuple[GaitSpec, GaitSpec]]:
    by_label: dict[str, GaitSpec] = {}
    for s in specs:
        by_label.setdefault(s.label, s)
    pairs = [
        ("stand", "walk"), ("walk", "stand"), ("walk", "run"), ("run", "walk"),
        ("walk", "turn_left"), ("walk", "turn_right"), ("stand", "hop_left"),
        ("walk", "sit"), ("sit", "stand"),
    ]
    out = []
    for a, b in pairs:
        if a in by_label and b in by_label:
            out.append((by_label[a], by_label[b]))
    return out


# ---------------------------------------------------------------------------
# Manifest persistence: JSON listing of specs plus clip files on disk.
# ---------------------------------------------------------------------------

def save_dataset(ds: PrimitiveDataset, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, clip in enumerate(ds.clips):
        name = f"clip_{i:04d}.bin"
        save_motion(out_dir / name, clip.frames, ds.fps, ds.skeleton.joint_count, clip.label_track)
        entries.append({"file": name, "labels": clip.spec_labels})
    manifest = {
        "fps": ds.fps,
        "history_len": ds.history_len,
        "future_len": ds.future_len,
        "skeleton": ds.skeleton.to_dict(),
        "clips": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset(manifest_path: Path) -> PrimitiveDataset:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    skel = Skeleton.from_dict(manifest["skeleton"])
    clips = []
    for entry in manifest["clips"]:
        frames, header = load_motion(manifest_path.parent / entry["file"])
        clips.append(Clip(frames=frames, label_track=header["label_track"], spec_labels=entry["labels"]))
    return PrimitiveDataset(
        skeleton=skel,
        clips=clips,
        history_len=manifest["history_len"],
        future_len=manifest["future_len"],
        fps=manifest["fps"],
    )


def collate_primitives(
    prims: list[MotionPrimitive], dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack primitives into (history, future, label) training tensors."""
    hist = torch.stack([p.history.to(dtype) for p in prims])
    fut = torch.stack([p.future.to(dtype) for p in prims])
    labels = torch.tensor([p.label_id for p in prims], dtype=torch.long)
    return hist, fut, labels
