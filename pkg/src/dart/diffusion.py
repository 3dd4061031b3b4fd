"""10-step latent diffusion: schedule, samplers, and the conditioned denoiser.

The denoiser predicts the clean latent directly. DDPM sampling is stochastic;
DDIM (eta = 0) runs all steps deterministically and stays differentiable end
to end with respect to the initial noise, which is what the latent-control
optimizer relies on.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_module_tensors, save_module
from .frames import canonicalize_batch
from .gaitgen import NULL_LABEL_ID, PrimitiveDataset, sample_consecutive
from .nets import TransformerConfig, TransformerStack
from .optim import AnnealedAdamW
from .vae import PrimitiveVAE, temporal_consistency_loss


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

@dataclass
class NoiseSchedule:
    """Bookkeeping for T diffusion steps; index convention is 1-based in t,
    with alphabar[0] = 1 by definition."""

    betas: torch.Tensor      # (T,) float64, betas[i] = beta_{i+1}
    alphabars: torch.Tensor  # (T+1,) float64, alphabars[t] = prod alpha_1..t

    def __post_init__(self):
        if not (self.betas > 0).all() or not (self.betas < 1).all():
            raise ValueError("betas must lie in (0, 1)")
        if self.alphabars[0] != 1.0:
            raise ValueError("alphabar[0] must be 1")
        if not (self.alphabars[1:] < self.alphabars[:-1]).all():
            raise ValueError("alphabar must be strictly decreasing")

    @property
    def steps(self) -> int:
        return self.betas.shape[0]

    def beta(self, t):
        return self._gather(self.betas, t, offset=-1)

    def alpha(self, t):
        return 1.0 - self.beta(t)

    def alphabar(self, t):
        return self._gather(self.alphabars, t, offset=0)

    @staticmethod
    def _gather(table, t, offset):
        if torch.is_tensor(t):
            return table[t + offset]
        return table[int(t) + offset]

    def to_jsonable(self) -> list[float]:
        return [float(b) for b in self.betas]

    @staticmethod
    def from_betas(betas) -> "NoiseSchedule":
        betas = torch.as_tensor(betas, dtype=torch.float64)
        alphas = 1.0 - betas
        alphabars = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(alphas, dim=0)])
        return NoiseSchedule(betas=betas, alphabars=alphabars)


def cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """alphabar(t) proportional to cos^2(((t/T + s)/(1 + s)) * pi/2), normalized
    to alphabar(0) = 1; betas derived stepwise and clipped at ``max_beta``."""
    if T < 2:
        raise ValueError("need at least 2 steps")
    grid = torch.arange(T + 1, dtype=torch.float64) / T
    raw = torch.cos(((grid + s) / (1.0 + s)) * math.pi / 2.0) ** 2
    abar = raw / raw[0]
    betas = torch.clamp(1.0 - abar[1:] / abar[:-1], max=max_beta)
    return NoiseSchedule.from_betas(betas)


def forward_diffuse(z0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form marginal q(z_t | z_0); ``t`` may be a scalar or per-sample."""
    abar = schedule.alphabar(t).to(z0.dtype)
    if abar.ndim > 0:
        abar = abar.reshape(-1, *([1] * (z0.ndim - 1)))
    return torch.sqrt(abar) * z0 + torch.sqrt(1.0 - abar) * eps


def posterior_mean(zhat0: torch.Tensor, z_t: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    """Mean of q(z_{t-1} | z_t, zhat0); collapses to zhat0 exactly at t = 1."""
    if t == 1:
        return zhat0
    abar_t = float(schedule.alphabar(t))
    abar_prev = float(schedule.alphabar(t - 1))
    beta_t = float(schedule.beta(t))
    alpha_t = float(schedule.alpha(t))
    c0 = math.sqrt(abar_prev) * beta_t / (1.0 - abar_t)
    ct = math.sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t)
    return c0 * zhat0 + ct * z_t


def cfg_denoise(denoiser, z_t, t, history, label_ids, w: float) -> torch.Tensor:
    """Classifier-free guidance on the text condition only.

    w = 1 is exactly the conditional call and w = 0 exactly the unconditional
    one (element-wise identities, not just limits).
    """
    if w == 0.0:
        return denoiser(z_t, t, history, torch.full_like(label_ids, NULL_LABEL_ID))
    cond = denoiser(z_t, t, history, label_ids)
    if w == 1.0:
        return cond
    uncond = denoiser(z_t, t, history, torch.full_like(label_ids, NULL_LABEL_ID))
    return uncond + w * (cond - uncond)


def ddpm_sample(
    denoiser,
    z_T: torch.Tensor,
    history: torch.Tensor,
    label_ids: torch.Tensor,
    schedule: NoiseSchedule,
    w: float = 1.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Stochastic ancestral sampling from t = T down to 1."""
    z_t = z_T
    b = z_T.shape[0]
    with torch.no_grad():
        for t in range(schedule.steps, 0, -1):
            t_batch = torch.full((b,), t, dtype=torch.long, device=z_T.device)
            zhat0 = cfg_denoise(denoiser, z_t, t_batch, history, label_ids, w)
            if not torch.isfinite(zhat0).all():
                raise FloatingPointError(f"non-finite denoiser output at step {t}")
            if t == 1:
                return zhat0
            mu = posterior_mean(zhat0, z_t, t, schedule)
            var = float(schedule.beta(t)) * (1.0 - float(schedule.alphabar(t - 1))) / (
                1.0 - float(schedule.alphabar(t))
            )
            noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype, device=z_t.device)
            z_t = mu + math.sqrt(var) * noise
    return z_t


def ddim_sample(
    denoiser,
    z_T: torch.Tensor,
    history: torch.Tensor,
    label_ids: torch.Tensor,
    schedule: NoiseSchedule,
    w: float = 1.0,
) -> torch.Tensor:
    """Deterministic (eta = 0) update over all T steps; differentiable in z_T."""
    z_t = z_T
    b = z_T.shape[0]
    for t in range(schedule.steps, 0, -1):
        t_batch = torch.full((b,), t, dtype=torch.long, device=z_T.device)
        zhat0 = cfg_denoise(denoiser, z_t, t_batch, history, label_ids, w)
        abar_t = float(schedule.alphabar(t))
        abar_prev = float(schedule.alphabar(t - 1))
        eps_hat = (z_t - math.sqrt(abar_t) * zhat0) / math.sqrt(1.0 - abar_t)
        z_t = math.sqrt(abar_prev) * zhat0 + math.sqrt(1.0 - abar_prev) * eps_hat
    return z_t


def rollout_probability(iteration: int, stage1: int, stage2: int) -> float:
    """Piecewise schedule for replacing ground-truth history with rollouts."""
    if iteration <= stage1:
        return 0.0
    if iteration > stage1 + stage2:
        return 1.0
    return (iteration - stage1) / stage2


# ---------------------------------------------------------------------------
# Denoiser network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DenoiserConfig:
    joint_count: int = 13
    history_len: int = 2
    latent_dim: int = 64
    vocab_size: int = 7
    layers: int = 4
    hidden: int = 128
    ff_dim: int = 256
    heads: int = 4
    dropout: float = 0.1
    steps: int = 10

    @property
    def feature_dim(self) -> int:
        return 12 * self.joint_count + 12


class Denoiser(nn.Module):
    """Predicts the clean latent from [step, text, history, noised-latent] tokens."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        n_tokens = 2 + cfg.history_len + 1
        self.stack = TransformerStack(
            TransformerConfig(
                layers=cfg.layers,
                hidden=cfg.hidden,
                ff_dim=cfg.ff_dim,
                heads=cfg.heads,
                dropout=cfg.dropout,
                max_tokens=n_tokens,
            )
        )
        self.step_embed = nn.Embedding(cfg.steps + 1, cfg.hidden)
        self.step_mlp = nn.Sequential(
            nn.Linear(cfg.hidden, cfg.hidden), nn.GELU(), nn.Linear(cfg.hidden, cfg.hidden)
        )
        self.text_embed = nn.Embedding(cfg.vocab_size + 1, cfg.hidden)
        self.hist_proj = nn.Linear(cfg.feature_dim, cfg.hidden)
        self.z_proj = nn.Linear(cfg.latent_dim, cfg.hidden)
        self.out = nn.Linear(cfg.hidden, cfg.latent_dim)

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, history: torch.Tensor, label_ids: torch.Tensor) -> torch.Tensor:
        if torch.is_tensor(t):
            t_idx = t.long()
        else:
            t_idx = torch.full((z_t.shape[0],), int(t), dtype=torch.long, device=z_t.device)
        tokens = torch.cat(
            [
                self.step_mlp(self.step_embed(t_idx)).unsqueeze(1),
                self.text_embed(label_ids.long()).unsqueeze(1),
                self.hist_proj(history),
                self.z_proj(z_t).unsqueeze(1),
            ],
            dim=1,
        )
        return self.out(self.stack(tokens)[:, -1])


# ---------------------------------------------------------------------------
# Scheduled training (rollout-history curriculum)
# ---------------------------------------------------------------------------

@dataclass
class DenoiserTrainConfig:
    stage1: int = 5000
    stage2: int = 5000
    stage3: int = 5000
    batch_size: int = 32
    n_rollouts: int = 4  # consecutive primitives per sampled sequence
    lr: float = 1e-4
    weight_decay: float = 0.01
    w_rec: float = 1.0
    w_aux: float = 10_000.0
    label_mask_prob: float = 0.1
    log_every: int = 50
    smooth_l1_beta: float = 1.0

    @property
    def total_iterations(self) -> int:
        return self.stage1 + self.stage2 + self.stage3


def train_denoiser(
    vae: PrimitiveVAE,
    latent_scale: float,
    dataset: PrimitiveDataset,
    cfg: DenoiserConfig,
    train_cfg: DenoiserTrainConfig,
    seed: int = 0,
    schedule: NoiseSchedule | None = None,
) -> tuple[Denoiser, NoiseSchedule, list[dict]]:
    """Scheduled training: progressively replace ground-truth history with the
    model's own (gradient-stopped) rollout history."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed + 1)
    schedule = schedule or cosine_schedule(cfg.steps)
    skel = dataset.skeleton
    h, f = dataset.history_len, dataset.future_len

    vae.eval()
    for p in vae.parameters():
        p.requires_grad_(False)

    model = Denoiser(cfg)
    model.train()
    opt = AnnealedAdamW(
        model.parameters(),
        base_lr=train_cfg.lr,
        total_steps=train_cfg.total_iterations,
        weight_decay=train_cfg.weight_decay,
    )

    log: list[dict] = []
    window = {"loss": 0.0, "simple": 0.0, "rollouts": 0, "nulls": 0, "samples": 0, "iters": 0, "p": 0.0}
    iteration = 0
    b = train_cfg.batch_size
    n = train_cfg.n_rollouts

    while iteration < train_cfg.total_iterations:
        seqs = [sample_consecutive(dataset, n, rng) for _ in range(b)]
        hist_gt = torch.stack(
            [torch.stack([s.primitive(i).history for i in range(n)]) for s in seqs]
        ).to(torch.float32)  # (B, N, H, D)
        fut_gt = torch.stack(
            [torch.stack([s.primitive(i).future for i in range(n)]) for s in seqs]
        ).to(torch.float32)  # (B, N, F, D)
        labels = torch.tensor([[s.labels[i] for i in range(n)] for s in seqs], dtype=torch.long)

        cur_hist = hist_gt[:, 0]
        for i in range(n):
            if iteration >= train_cfg.total_iterations:
                break
            future = fut_gt[:, i]
            label_i = labels[:, i]
            mask = torch.rand(b, generator=gen) < train_cfg.label_mask_prob
            masked_labels = torch.where(mask, torch.full_like(label_i, NULL_LABEL_ID), label_i)

            with torch.no_grad():
                mu, _ = vae.encode(cur_hist, future)
                z0 = mu / latent_scale
            t = torch.randint(1, cfg.steps + 1, (b,), generator=gen)
            eps = torch.randn(b, cfg.latent_dim, generator=gen)
            z_t = forward_diffuse(z0, t, eps, schedule)

            zhat0 = model(z_t, t, cur_hist, masked_labels)
            l_simple = F.smooth_l1_loss(zhat0, z0, beta=train_cfg.smooth_l1_beta)
            decoded = vae.decode(cur_hist, zhat0 * latent_scale)
            l_rec = F.smooth_l1_loss(decoded, future, beta=train_cfg.smooth_l1_beta)
            l_aux = temporal_consistency_loss(decoded, cur_hist, dataset.layout, train_cfg.smooth_l1_beta)
            total = l_simple + train_cfg.w_rec * l_rec + train_cfg.w_aux * l_aux
            if not torch.isfinite(total):
                return model, schedule, log  # divergence: stop at last good state
            opt.zero_grad()
            total.backward()
            opt.step()
            iteration += 1

            # choose the next history per sequence: model rollout vs ground truth
            p = rollout_probability(iteration, train_cfg.stage1, train_cfg.stage2)
            use_rollout = torch.rand(b, generator=gen) < p
            next_hist = torch.empty_like(cur_hist)
            with torch.no_grad():
                gt_local, _, _, _ = canonicalize_batch(future[:, f - h:], skel)
                next_hist[:] = gt_local
                idx = use_rollout.nonzero(as_tuple=True)[0]
                if idx.numel() > 0:
                    model.eval()
                    z_T = forward_diffuse(z0[idx], cfg.steps, torch.randn(idx.numel(), cfg.latent_dim, generator=gen), schedule)
                    z_roll = ddpm_sample(model, z_T, cur_hist[idx], label_i[idx], schedule, w=1.0, generator=gen)
                    x_roll = vae.decode(cur_hist[idx], z_roll * latent_scale)
                    roll_local, _, _, _ = canonicalize_batch(x_roll[:, f - h:], skel)
                    next_hist[idx] = roll_local
                    model.train()
            cur_hist = next_hist

            window["loss"] += float(total.detach())
            window["simple"] += float(l_simple.detach())
            window["rollouts"] += int(use_rollout.sum())
            window["nulls"] += int(mask.sum())
            window["samples"] += b
            window["iters"] += 1
            window["p"] += p
            if iteration % train_cfg.log_every == 0:
                log.append(
                    {
                        "iteration": iteration,
                        "loss": window["loss"] / window["iters"],
                        "simple": window["simple"] / window["iters"],
                        "rollout_frac": window["rollouts"] / window["samples"],
                        "null_frac": window["nulls"] / window["samples"],
                        "schedule_p": window["p"] / window["iters"],
                        "lr": opt.effective_lr,
                    }
                )
                window = {k: 0 if isinstance(v, int) else 0.0 for k, v in window.items()}

    model.eval()
    return model, schedule, log


DENOISER_KIND = "latent-denoiser"


def save_denoiser(path, model: Denoiser, schedule: NoiseSchedule, latent_scale: float) -> None:
    config = {
        "denoiser": asdict(model.cfg),
        "betas": schedule.to_jsonable(),
        "latent_scale": latent_scale,
    }
    save_module(path, DENOISER_KIND, config, model)


def load_denoiser(path) -> tuple[Denoiser, NoiseSchedule, float]:
    config, params, _ = load_module_tensors(path, DENOISER_KIND)
    cfg = DenoiserConfig(**config["denoiser"])
    model = Denoiser(cfg)
    model.load_state_dict(params)
    model.eval()
    schedule = NoiseSchedule.from_betas(config["betas"])
    return model, schedule, float(config["latent_scale"])
