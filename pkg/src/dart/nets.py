"""Parameterized function blocks and the gradient-check harness.

Reverse-mode differentiation is supplied by torch autograd; `grad_check`
verifies every block against central finite differences so the gradient
contract stays mechanically enforced rather than assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 7
    hidden: int = 256
    ff_dim: int = 1024
    heads: int = 4
    dropout: float = 0.1
    max_tokens: int = 64


class EncoderBlock(nn.Module):
    """Post-norm transformer encoder layer: self-attention + gelu feed-forward."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.attn = nn.MultiheadAttention(cfg.hidden, cfg.heads, dropout=cfg.dropout, batch_first=True)
        self.ff = nn.Sequential(
            nn.Linear(cfg.hidden, cfg.ff_dim),
            nn.GELU(),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.ff_dim, cfg.hidden),
        )
        self.norm1 = nn.LayerNorm(cfg.hidden)
        self.norm2 = nn.LayerNorm(cfg.hidden)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + self.drop(a))
        x = self.norm2(x + self.drop(self.ff(x)))
        return x


class TransformerStack(nn.Module):
    """Encoder stack with U-shaped long-range skips: layer k of the second half
    consumes the output of layer (layers-1-k) via concatenate + linear project.

    Learned positional embeddings (zero-initialized) are added per token slot.
    Skip projections start as identity on the current path so an untrained
    stack reduces to a plain layer-norm cascade.
    """

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.layers))
        self.pos_emb = nn.Parameter(torch.zeros(cfg.max_tokens, cfg.hidden))
        self.skip_projs = nn.ModuleDict()
        for k in range(cfg.layers):
            partner = cfg.layers - 1 - k
            if partner < k:
                proj = nn.Linear(2 * cfg.hidden, cfg.hidden)
                with torch.no_grad():
                    proj.weight.zero_()
                    proj.weight[:, : cfg.hidden] = torch.eye(cfg.hidden)
                    proj.bias.zero_()
                self.skip_projs[str(k)] = proj

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.cfg.hidden:
            raise ValueError(f"token dim {tokens.shape[-1]} != hidden {self.cfg.hidden}")
        if tokens.shape[-2] > self.cfg.max_tokens:
            raise ValueError(f"{tokens.shape[-2]} tokens exceeds max_tokens {self.cfg.max_tokens}")
        x = tokens + self.pos_emb[: tokens.shape[-2]]
        stored: dict[int, torch.Tensor] = {}
        for k, block in enumerate(self.blocks):
            partner = self.cfg.layers - 1 - k
            if partner < k:
                x = self.skip_projs[str(k)](torch.cat([x, stored[partner]], dim=-1))
            x = block(x)
            stored[k] = x
        return x


class ResidualMLP(nn.Module):
    """Hidden layers with additive residual links and gelu; linear output head."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int = 512, layers: int = 4):
        super().__init__()
        self.in_proj = nn.Linear(in_dim, hidden)
        self.layers = nn.ModuleList(nn.Linear(hidden, hidden) for _ in range(layers))
        self.head = nn.Linear(hidden, out_dim)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.in_proj(x))
        for layer in self.layers:
            h = h + self.act(layer(h))
        return self.head(h)


def near_zero_init(module: ResidualMLP, scale: float = 1e-4, generator: torch.Generator | None = None) -> ResidualMLP:
    """Shrink the output head so initial outputs are near zero; body keeps its
    standard init. ``scale`` is the sampling standard deviation (0 = exact zeros)."""
    if scale < 0:
        raise ValueError("scale must be >= 0")
    with torch.no_grad():
        if scale == 0:
            module.head.weight.zero_()
        else:
            module.head.weight.normal_(0.0, scale, generator=generator)
        module.head.bias.zero_()
    return module


def grad_check(fn, params, epsilon: float = 1e-4) -> float:
    """Max relative error between autograd and central finite differences.

    ``fn`` is a zero-argument callable returning a scalar, deterministic in
    ``params`` (run modules in eval mode). Perturbs every element of every
    parameter, so keep this at toy scale.
    """
    params = list(params)
    for p in params:
        p.requires_grad_(True)
        if p.grad is not None:
            p.grad = None
    value = fn()
    if not torch.isfinite(value):
        raise ValueError("non-finite function value")
    grads = torch.autograd.grad(value, params, allow_unused=True)

    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + epsilon
                f_plus = fn().item()
                flat[i] = orig - epsilon
                f_minus = fn().item()
                flat[i] = orig
                g_fd = (f_plus - f_minus) / (2.0 * epsilon)
                g_ad = gflat[i].item()
                if not (math.isfinite(g_fd) and math.isfinite(g_ad)):
                    raise ValueError("non-finite gradient encountered")
                rel = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1e-8)
                worst = max(worst, rel)
    return worst
