"""AdamW with linear learning-rate annealing and non-finite-gradient guards."""

from __future__ import annotations

import warnings

import torch


class AnnealedAdamW:
    """Decoupled-weight-decay Adam whose lr anneals linearly to 0.

    Effective lr at step k is ``base_lr * max(0, 1 - k / total_steps)``.
    Steps with any non-finite gradient are skipped (with a warning) instead of
    corrupting the parameters, and every applied step asserts the parameters
    stayed finite.
    """

    def __init__(
        self,
        params,
        base_lr: float = 1e-4,
        total_steps: int = 10_000,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = [p for p in params if p.requires_grad]
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.inner = torch.optim.AdamW(
            self.params, lr=base_lr, betas=betas, eps=eps, weight_decay=weight_decay
        )
        self.step_count = 0
        self.skipped_steps = 0

    @property
    def effective_lr(self) -> float:
        return self.base_lr * max(0.0, 1.0 - self.step_count / self.total_steps)

    def zero_grad(self):
        self.inner.zero_grad(set_to_none=True)

    def step(self) -> bool:
        """Apply one update; returns False when skipped on non-finite grads."""
        for p in self.params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                self.skipped_steps += 1
                self.step_count += 1
                warnings.warn("skipping optimizer step: non-finite gradient")
                return False
        lr = self.effective_lr
        for group in self.inner.param_groups:
            group["lr"] = lr
        if lr > 0.0:
            self.inner.step()
        self.step_count += 1
        for p in self.params:
            if not torch.isfinite(p).all():
                raise FloatingPointError("optimizer produced non-finite parameters")
        return True
