"""Autoregressive composition of primitives into arbitrarily long motion.

World bookkeeping runs in float64 so seam errors stay well below the 1e-4
continuity budget even hundreds of meters from the origin; the models
themselves run in float32. The whole path stays differentiable when driven
with the DDIM sampler, which the latent-noise optimizer relies on.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import torch

from .diffusion import Denoiser, NoiseSchedule, ddim_sample, ddpm_sample, load_denoiser
from .frames import CanonicalTransform, FrameLayout, canonicalize, decanonicalize
from .gaitgen import LABELS
from .skeleton import Skeleton
from .vae import PrimitiveVAE, load_vae


class RolloutError(RuntimeError):
    """Generation produced non-finite frames; carries the partial motion."""

    def __init__(self, message: str, partial_motion: torch.Tensor, step: int):
        super().__init__(f"{message} (at primitive {step}, {partial_motion.shape[0]} frames emitted)")
        self.partial_motion = partial_motion
        self.step = step


@dataclass
class GeneratorStack:
    """Frozen VAE decoder + denoiser + schedule bundle used for generation."""

    vae: PrimitiveVAE
    denoiser: Denoiser
    schedule: NoiseSchedule
    latent_scale: float
    skeleton: Skeleton

    def __post_init__(self):
        self.vae.eval()
        self.denoiser.eval()
        self.layout = FrameLayout(self.skeleton.joint_count)

    @property
    def history_len(self) -> int:
        return self.vae.cfg.history_len

    @property
    def future_len(self) -> int:
        return self.vae.cfg.future_len

    @property
    def latent_dim(self) -> int:
        return self.denoiser.cfg.latent_dim

    @staticmethod
    def load(vae_path, denoiser_path) -> "GeneratorStack":
        vae, skel, _ = load_vae(vae_path)
        denoiser, schedule, scale = load_denoiser(denoiser_path)
        return GeneratorStack(vae=vae, denoiser=denoiser, schedule=schedule, latent_scale=scale, skeleton=skel)


def expand_timeline(timeline: list[tuple[int, int]]) -> list[int]:
    """[(label_id, primitive_count), ...] -> per-primitive label list."""
    labels = []
    for label_id, count in timeline:
        if count < 1:
            raise ValueError("primitive counts must be >= 1")
        labels.extend([label_id] * count)
    return labels


def generate_primitive(
    stack: GeneratorStack,
    canonical_history: torch.Tensor,  # (H, D) float32
    label_id: int,
    w: float,
    sampler: str,
    z_T: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """One denoise+decode step; returns canonical future frames (F, D) and z_T."""
    if z_T is None:
        z_T = torch.randn(1, stack.latent_dim, generator=generator)
    labels = torch.tensor([label_id], dtype=torch.long)
    hist = canonical_history.unsqueeze(0)
    if sampler == "ddim":
        zhat0 = ddim_sample(stack.denoiser, z_T, hist, labels, stack.schedule, w=w)
    elif sampler == "ddpm":
        zhat0 = ddpm_sample(stack.denoiser, z_T, hist, labels, stack.schedule, w=w, generator=generator)
    else:
        raise ValueError(f"unknown sampler {sampler!r} (expected 'ddpm' or 'ddim')")
    future = stack.vae.decode(hist, zhat0 * stack.latent_scale)[0]
    return future, z_T


def rollout(
    stack: GeneratorStack,
    seed_history: torch.Tensor,  # (H, D) world frames
    labels: list[int],
    w: float = 5.0,
    sampler: str = "ddim",
    z_noises: torch.Tensor | None = None,  # (N, L)
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, dict]:
    """Autoregressive rollout; returns (H + N*F, D) world motion and diagnostics."""
    h = stack.history_len
    if seed_history.shape[0] != h:
        raise ValueError(f"seed history must have {h} frames, got {seed_history.shape[0]}")
    n = len(labels)
    if z_noises is not None and z_noises.shape[0] != n:
        raise ValueError(f"need {n} latent noises, got {z_noises.shape[0]}")
    world = seed_history.to(torch.float64)
    chunks = [world]
    max_seam_gap = 0.0
    for i in range(n):
        tail = torch.cat(chunks, dim=0)[-h:]
        local, tf = canonicalize(tail, stack.skeleton)
        gap = float((decanonicalize(local, tf, stack.skeleton) - tail).abs().max().detach())
        max_seam_gap = max(max_seam_gap, gap)
        z_T = None if z_noises is None else z_noises[i: i + 1]
        future, _ = generate_primitive(
            stack, local.to(torch.float32), labels[i], w, sampler, z_T=z_T, generator=generator
        )
        if not torch.isfinite(future).all():
            raise RolloutError("non-finite frames", torch.cat(chunks, dim=0).detach(), i)
        world_future = decanonicalize(future.to(torch.float64), tf, stack.skeleton)
        chunks.append(world_future)
    motion = torch.cat(chunks, dim=0)
    return motion, {"max_seam_gap": max_seam_gap, "primitives": n}


@dataclass
class StreamSession:
    """One logical generation stream: owns its history and frame clock."""

    stack: GeneratorStack
    label_id: int
    w: float = 5.0
    sampler: str = "ddpm"
    fps: float = 30.0
    seed: int | None = None
    seed_history: torch.Tensor | None = None  # world frames (H, D)

    def __post_init__(self):
        from .gaitgen import GaitSpec, synthesize_clip

        self.generator = torch.Generator()
        self.generator.manual_seed(self.seed if self.seed is not None else torch.seed() % (2**63))
        if self.seed_history is None:
            rest = synthesize_clip(GaitSpec("stand", seed=0), 10, self.stack.skeleton)
            self.seed_history = rest[: self.stack.history_len]
        self.world = self.seed_history.to(torch.float64)
        self.steps = 0
        self.frames_emitted = int(self.world.shape[0])
        self.latencies: list[float] = []

    def set_label(self, label_id: int) -> None:
        # applied at the next primitive boundary (stream_step reads it fresh)
        self.label_id = label_id

    def stream_step(self) -> tuple[torch.Tensor, dict]:
        """Generate one primitive; returns F world frames and step metrics."""
        h = self.stack.history_len
        t0 = time.perf_counter()
        with torch.no_grad():
            tail = self.world[-h:]
            local, tf = canonicalize(tail, self.stack.skeleton)
            future, _ = generate_primitive(
                self.stack, local.to(torch.float32), self.label_id, self.w, self.sampler,
                generator=self.generator,
            )
            if not torch.isfinite(future).all():
                raise RolloutError("non-finite frames", self.world, self.steps)
            world_future = decanonicalize(future.to(torch.float64), tf, self.stack.skeleton)
        latency = time.perf_counter() - t0
        self.world = torch.cat([self.world, world_future], dim=0)
        self.steps += 1
        self.frames_emitted += world_future.shape[0]
        self.latencies.append(latency)
        metrics = {
            "step": self.steps,
            "label_id": self.label_id,
            "label": LABELS[self.label_id] if self.label_id < len(LABELS) else "null",
            "latency_s": latency,
            "frames_emitted": self.frames_emitted,
        }
        return world_future.to(torch.float32), metrics
