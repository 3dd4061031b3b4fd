"""Evaluation helpers for the loss-weight ablations: reconstruction fidelity
on held-out primitives and smoothness (jerk) of reconstructed clips."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .gaitgen import PrimitiveDataset, collate_primitives, sample_batch
from .metrics import jerk_of_positions
from .vae import PrimitiveVAE, reconstruct_clip


def heldout_reconstruction_error(
    vae: PrimitiveVAE, dataset: PrimitiveDataset, n_samples: int = 512, seed: int = 0
) -> float:
    """Mean smooth-L1 between decoded (from the posterior mean) and ground
    truth future frames over held-out primitives."""
    rng = np.random.default_rng(seed)
    vae.eval()
    with torch.no_grad():
        prims = sample_batch(dataset, n_samples, rng, balanced=True)
        hist, fut, _ = collate_primitives(prims)
        mu, _ = vae.encode(hist, fut)
        pred = vae.decode(hist, mu)
        return float(F.smooth_l1_loss(pred, fut, beta=1.0))


def reconstruction_jerk(
    vae: PrimitiveVAE, dataset: PrimitiveDataset, max_clips: int = 8, max_primitives: int = 12
) -> float:
    """Mean per-frame jerk magnitude of per-primitive reconstructions stitched
    back into world coordinates."""
    layout = dataset.layout
    values = []
    for ci in range(min(max_clips, len(dataset.clips))):
        rec, _ = reconstruct_clip(vae, dataset, ci, max_primitives=max_primitives)
        positions = layout.joints_of(rec)
        values.append(float(jerk_of_positions(positions, dataset.fps).mean()))
    return float(np.mean(values))
