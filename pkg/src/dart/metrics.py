"""Desk-scale metric suite: jerk, skate, goal errors, throughput profiling.

All metrics are pure functions of their inputs. Jerk magnitudes are
aggregated as the max over joints (recorded in report metadata since other
aggregations exist in the literature).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .frames import FrameLayout

TRANSITION_WINDOW_LEN = 30
CONTACT_HEIGHT = 0.03  # meters; foot counts as in contact below this


@dataclass
class TransitionWindow:
    """30 frames centered at a segment boundary."""

    frames: torch.Tensor  # (30, D)
    fps: float

    def __post_init__(self):
        if self.frames.shape[0] != TRANSITION_WINDOW_LEN:
            raise ValueError(f"transition window must be {TRANSITION_WINDOW_LEN} frames")


def extract_transition_window(motion: torch.Tensor, boundary_frame: int, fps: float) -> TransitionWindow:
    half = TRANSITION_WINDOW_LEN // 2
    lo = boundary_frame - half
    if lo < 0 or lo + TRANSITION_WINDOW_LEN > motion.shape[0]:
        raise ValueError("window does not fit inside the motion")
    return TransitionWindow(frames=motion[lo: lo + TRANSITION_WINDOW_LEN], fps=fps)


def jerk_of_positions(positions: torch.Tensor, fps: float) -> torch.Tensor:
    """Per-frame jerk magnitude, max over joints. positions: (T, J, 3)."""
    if positions.shape[0] < 4:
        raise ValueError("need at least 4 frames for a third difference")
    d3 = (
        positions[3:]
        - 3.0 * positions[2:-1]
        + 3.0 * positions[1:-2]
        - positions[:-3]
    ) * fps**3
    return d3.norm(dim=-1).amax(dim=-1)


def jerk_metrics(window: TransitionWindow, layout: FrameLayout) -> tuple[float, float]:
    """(peak jerk, area under jerk) over the window's joint trajectories."""
    positions = layout.joints_of(window.frames)
    jerk = jerk_of_positions(positions, window.fps)
    pj = float(jerk.max())
    auj = float(jerk.sum() / window.fps)
    return pj, auj


def skate(
    motion: torch.Tensor,
    foot_joints: tuple[int, ...],
    fps: float,
    layout: FrameLayout,
    floor_height: float = 0.0,
) -> float:
    """Mean scaled foot skating over contact frames, in cm/s.

    A foot is in contact when the higher of its two consecutive heights is
    below 0.03 m; its horizontal displacement is scaled by (2 - 2^(h/0.03)).
    """
    joints = layout.joints_of(motion)
    feet = joints[:, list(foot_joints)]  # (T, nf, 3)
    if feet.shape[0] < 2:
        return 0.0
    prev, cur = feet[:-1], feet[1:]
    disp = (cur[..., :2] - prev[..., :2]).norm(dim=-1)
    h = torch.maximum(prev[..., 2], cur[..., 2]) - floor_height
    contact = h < CONTACT_HEIGHT
    if not contact.any():
        return 0.0
    scaled = disp * (2.0 - torch.pow(2.0, h / CONTACT_HEIGHT))
    return float(scaled[contact].mean() * fps * 100.0)


def floor_distance(
    motion: torch.Tensor,
    foot_joints: tuple[int, ...],
    layout: FrameLayout,
    floor_height: float = 0.0,
) -> float:
    """Mean |lower-foot height| over frames, in cm."""
    joints = layout.joints_of(motion)
    lower = joints[:, list(foot_joints), 2].min(dim=-1).values - floor_height
    return float(lower.abs().mean() * 100.0)


def goal_errors(
    motion: torch.Tensor,
    history_ref: torch.Tensor,
    goal_joints: torch.Tensor,
    frame_index: int,
    layout: FrameLayout,
) -> tuple[float, float]:
    """(history error, goal error) as mean per-joint L2 distance in cm."""
    h = history_ref.shape[0]
    if frame_index >= motion.shape[0]:
        raise IndexError("goal frame outside motion")
    hist_err = (
        (layout.joints_of(motion[:h]) - layout.joints_of(history_ref)).norm(dim=-1).mean()
    )
    goal_err = (layout.joints_of(motion[frame_index]) - goal_joints.to(motion.dtype)).norm(dim=-1).mean()
    return float(hist_err * 100.0), float(goal_err * 100.0)


def throughput_profile(session, n_frames: int) -> dict:
    """Wall-clock streaming throughput; values are measured, never asserted
    against other hardware."""
    emitted = 0
    t0 = time.perf_counter()
    first_latency = None
    while emitted < n_frames:
        frames, metrics = session.stream_step()
        if first_latency is None:
            first_latency = metrics["latency_s"]
        emitted += frames.shape[0]
    elapsed = time.perf_counter() - t0
    return {
        "frames": emitted,
        "elapsed_s": elapsed,
        "frames_per_s": emitted / elapsed,
        "first_frame_latency_s": first_latency,
        "finite": bool(torch.isfinite(session.world).all()),
    }


def bootstrap_ci(values, n_resamples: int = 1000, seed: int = 0, level: float = 0.95) -> tuple[float, float, float]:
    """(mean, lo, hi) percentile bootstrap confidence interval."""
    rng = np.random.default_rng(seed)
    arr = np.asarray(values, dtype=np.float64)
    means = np.array([rng.choice(arr, size=arr.size, replace=True).mean() for _ in range(n_resamples)])
    alpha = (1.0 - level) / 2.0
    return float(arr.mean()), float(np.quantile(means, alpha)), float(np.quantile(means, 1 - alpha))


def write_report(path, entries: dict[str, dict]) -> None:
    """Report format: metric name -> {value, unit, config}."""
    for name, entry in entries.items():
        missing = {"value", "unit"} - set(entry)
        if missing:
            raise ValueError(f"report entry {name!r} missing {missing}")
    Path(path).write_text(json.dumps(entries, indent=2))


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
