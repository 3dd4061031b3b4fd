"""Motion-primitive variational autoencoder.

The encoder compresses F future frames conditioned on H history frames into a
latent code read off two learnable distribution tokens; the decoder predicts
the future frames from zero query tokens attending to the latent and history.
After training, latents are divided by a calibrated scalar std so diffusion
operates on roughly unit-variance codes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_module_tensors, save_module
from .frames import FrameLayout, decanonicalize
from .gaitgen import PrimitiveDataset, collate_primitives, sample_batch
from .nets import TransformerConfig, TransformerStack
from .optim import AnnealedAdamW
from .rotations import relative_rotation_6d
from .skeleton import Skeleton, forward_kinematics


@dataclass(frozen=True)
class VaeConfig:
    joint_count: int = 13
    history_len: int = 2
    future_len: int = 8
    latent_dim: int = 64
    layers: int = 5
    hidden: int = 128
    ff_dim: int = 256
    heads: int = 4
    dropout: float = 0.1
    w_kl: float = 1e-6
    w_aux: float = 100.0
    w_fk: float = 100.0
    smooth_l1_beta: float = 1.0

    @property
    def feature_dim(self) -> int:
        return 12 * self.joint_count + 12


class PrimitiveVAE(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.feature_dim
        enc_tokens = 2 + cfg.history_len + cfg.future_len
        dec_tokens = 1 + cfg.history_len + cfg.future_len
        tf = dict(layers=cfg.layers, hidden=cfg.hidden, ff_dim=cfg.ff_dim, heads=cfg.heads, dropout=cfg.dropout)
        self.encoder = TransformerStack(TransformerConfig(max_tokens=enc_tokens, **tf))
        self.decoder = TransformerStack(TransformerConfig(max_tokens=dec_tokens, **tf))
        self.token_mu = nn.Parameter(torch.randn(cfg.hidden) * 0.02)
        self.token_sigma = nn.Parameter(torch.randn(cfg.hidden) * 0.02)
        self.enc_frame_proj = nn.Linear(d, cfg.hidden)
        self.dec_frame_proj = nn.Linear(d, cfg.hidden)
        self.to_mu = nn.Linear(cfg.hidden, cfg.latent_dim)
        self.to_logvar = nn.Linear(cfg.hidden, cfg.latent_dim)
        self.z_proj = nn.Linear(cfg.latent_dim, cfg.hidden)
        self.out_proj = nn.Linear(cfg.hidden, d)
        # bias untrained predictions toward identity rotations so the 6D
        # Gram-Schmidt in downstream losses starts well-conditioned
        layout = FrameLayout(cfg.joint_count)
        with torch.no_grad():
            self.out_proj.bias.zero_()
            identity = torch.tensor([1.0, 0, 0, 0, 1, 0])
            self.out_proj.bias[layout.rot] = identity
            self.out_proj.bias[layout.drot] = identity
            self.out_proj.bias[layout.theta] = identity.repeat(cfg.joint_count - 1)

    def encode(self, history: torch.Tensor, future: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B,H,D),(B,F,D) -> mu,logvar each (B,L)."""
        b = history.shape[0]
        if history.shape[1] != self.cfg.history_len or future.shape[1] != self.cfg.future_len:
            raise ValueError(
                f"expected H={self.cfg.history_len}, F={self.cfg.future_len}; "
                f"got {history.shape[1]}, {future.shape[1]}"
            )
        tokens = torch.cat(
            [
                self.token_mu.expand(b, 1, -1),
                self.token_sigma.expand(b, 1, -1),
                self.enc_frame_proj(history),
                self.enc_frame_proj(future),
            ],
            dim=1,
        )
        out = self.encoder(tokens)
        return self.to_mu(out[:, 0]), self.to_logvar(out[:, 1])

    def decode(self, history: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """(B,H,D),(B,L) -> (B,F,D); zero query tokens attend to [z, history]."""
        b = history.shape[0]
        queries = torch.zeros(
            b, self.cfg.future_len, self.cfg.hidden, dtype=history.dtype, device=history.device
        )
        tokens = torch.cat(
            [self.z_proj(z).unsqueeze(1), self.dec_frame_proj(history), queries], dim=1
        )
        out = self.decoder(tokens)
        return self.out_proj(out[:, 1 + self.cfg.history_len:])

    def forward(self, history, future, noise):
        mu, logvar = self.encode(history, future)
        z = reparameterize(mu, logvar, noise)
        return self.decode(history, z), mu, logvar


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    return mu + torch.exp(0.5 * logvar) * noise


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)), summed over latent dims, batch-averaged."""
    per_sample = 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0).sum(dim=-1)
    return per_sample.mean()


def temporal_consistency_loss(
    pred_future: torch.Tensor,
    history: torch.Tensor,
    layout: FrameLayout,
    beta: float = 1.0,
) -> torch.Tensor:
    """Predicted difference features vs differences recomputed from predicted
    absolute features; the frame before future frame 0 is the last history frame."""
    prev = torch.cat([history[:, -1:], pred_future[:, :-1]], dim=1)
    loss = F.smooth_l1_loss(
        pred_future[:, :, layout.t] - prev[:, :, layout.t],
        pred_future[:, :, layout.dt],
        beta=beta,
    )
    loss = loss + F.smooth_l1_loss(
        pred_future[:, :, layout.joints] - prev[:, :, layout.joints],
        pred_future[:, :, layout.djoints],
        beta=beta,
    )
    recomputed = relative_rotation_6d(prev[:, :, layout.rot], pred_future[:, :, layout.rot])
    loss = loss + F.smooth_l1_loss(recomputed, pred_future[:, :, layout.drot], beta=beta)
    return loss


def fk_losses(
    pred_future: torch.Tensor,
    target_future: torch.Tensor,
    skel: Skeleton,
    layout: FrameLayout,
    beta: float = 1.0,
) -> torch.Tensor:
    """Joint reconstruction through FK plus joint/parameter consistency."""
    def fk(frames):
        return forward_kinematics(
            skel,
            frames[..., layout.t],
            frames[..., layout.rot],
            layout.theta_of(frames),
        )

    pred_joints_fk = fk(pred_future)
    with torch.no_grad():
        target_joints_fk = fk(target_future)
    joint_rec = F.smooth_l1_loss(pred_joints_fk, target_joints_fk, beta=beta)
    consistency = F.smooth_l1_loss(layout.joints_of(pred_future), pred_joints_fk, beta=beta)
    return joint_rec + consistency


def vae_loss_components(
    pred_future: torch.Tensor,
    target_future: torch.Tensor,
    history: torch.Tensor,
    mu: torch.Tensor,
    logvar: torch.Tensor,
    skel: Skeleton,
    cfg: VaeConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    layout = FrameLayout(skel.joint_count)
    beta = cfg.smooth_l1_beta
    l_rec = F.smooth_l1_loss(pred_future, target_future, beta=beta)
    l_kl = kl_divergence(mu, logvar)
    l_aux = temporal_consistency_loss(pred_future, history, layout, beta)
    l_fk = fk_losses(pred_future, target_future, skel, layout, beta)
    total = l_rec + cfg.w_kl * l_kl + cfg.w_aux * l_aux + cfg.w_fk * l_fk
    parts = {
        "rec": float(l_rec.detach()),
        "kl": float(l_kl.detach()),
        "aux": float(l_aux.detach()),
        "fk": float(l_fk.detach()),
        "total": float(total.detach()),
    }
    if not torch.isfinite(total):
        raise FloatingPointError(f"non-finite vae loss: {parts}")
    return total, parts


def vae_loss(
    model: PrimitiveVAE,
    history: torch.Tensor,
    future: torch.Tensor,
    skel: Skeleton,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    mu, logvar = model.encode(history, future)
    noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    z = reparameterize(mu, logvar, noise)
    pred = model.decode(history, z)
    return vae_loss_components(pred, future, history, mu, logvar, skel, model.cfg)


@dataclass
class VaeTrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 0.01
    balanced_sampling: bool = True
    log_every: int = 100


def train_vae(
    dataset: PrimitiveDataset,
    cfg: VaeConfig,
    train_cfg: VaeTrainConfig,
    seed: int = 0,
    out_path=None,
) -> tuple[PrimitiveVAE, list[dict]]:
    """Optimize the VAE on sampled primitives; returns the model and loss curve."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = PrimitiveVAE(cfg)
    model.train()
    opt = AnnealedAdamW(
        model.parameters(),
        base_lr=train_cfg.lr,
        total_steps=train_cfg.steps,
        weight_decay=train_cfg.weight_decay,
    )
    curve = []
    skel = dataset.skeleton
    for step in range(train_cfg.steps):
        prims = sample_batch(dataset, train_cfg.batch_size, rng, balanced=train_cfg.balanced_sampling)
        history, future, _ = collate_primitives(prims)
        try:
            total, parts = vae_loss(model, history, future, skel)
        except FloatingPointError:
            break  # divergence: keep the last good parameters
        opt.zero_grad()
        total.backward()
        opt.step()
        if step % train_cfg.log_every == 0 or step == train_cfg.steps - 1:
            parts["step"] = step
            parts["lr"] = opt.effective_lr
            curve.append(parts)
    model.eval()
    if out_path is not None:
        save_vae(out_path, model, skel, latent_scale=1.0)
    return model, curve


def calibrate_latent_scale(
    dataset: PrimitiveDataset,
    model: PrimitiveVAE,
    n_samples: int = 1024,
    seed: int = 0,
) -> float:
    """Scalar std of encoder means over a calibration batch; diffusion uses z/scale."""
    rng = np.random.default_rng(seed)
    model.eval()
    with torch.no_grad():
        prims = sample_batch(dataset, n_samples, rng, balanced=True)
        history, future, _ = collate_primitives(prims)
        mu, _ = model.encode(history, future)
        scale = float(mu.std())
    if scale < 1e-8:
        raise ValueError("encoder output is constant; cannot calibrate latent scale")
    return scale


def reconstruct_clip(
    model: PrimitiveVAE,
    dataset: PrimitiveDataset,
    clip_idx: int,
    max_primitives: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-primitive encode(mean)/decode over a clip with ground-truth history.

    Returns (reconstructed, reference) world future frames, concatenated over
    primitives, for reconstruction-error and smoothness evaluation.
    """
    model.eval()
    skel = dataset.skeleton
    h, f = dataset.history_len, dataset.future_len
    clip = dataset.clips[clip_idx]
    n = (clip.frames.shape[0] - h) // f
    if max_primitives is not None:
        n = min(n, max_primitives)
    rec_frames, ref_frames = [], []
    with torch.no_grad():
        for i in range(n):
            prim = dataset.primitive_at(clip_idx, i * f, clip.label_track[0][0])
            mu, _ = model.encode(prim.history.unsqueeze(0), prim.future.unsqueeze(0))
            pred = model.decode(prim.history.unsqueeze(0), mu)[0]
            rec_frames.append(decanonicalize(pred.to(torch.float64), prim.transform.to(torch.float64), skel))
            ref_frames.append(decanonicalize(prim.future.to(torch.float64), prim.transform.to(torch.float64), skel))
    return torch.cat(rec_frames), torch.cat(ref_frames)


VAE_KIND = "primitive-vae"


def save_vae(path, model: PrimitiveVAE, skel: Skeleton, latent_scale: float) -> None:
    config = {
        "vae": asdict(model.cfg),
        "skeleton": skel.to_dict(),
        "latent_scale": latent_scale,
    }
    save_module(path, VAE_KIND, config, model)


def load_vae(path) -> tuple[PrimitiveVAE, Skeleton, float]:
    config, params, _ = load_module_tensors(path, VAE_KIND)
    cfg = VaeConfig(**config["vae"])
    model = PrimitiveVAE(cfg)
    model.load_state_dict(params)
    model.eval()
    skel = Skeleton.from_dict(config["skeleton"])
    return model, skel, float(config["latent_scale"])
