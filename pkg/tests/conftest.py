import numpy as np
import pytest
import torch

ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_line("")
        terminalreporter.write_line("=== acceptance criteria ===")
        for name, ok in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")

from dart.diffusion import Denoiser, DenoiserConfig, cosine_schedule
from dart.gaitgen import GaitSpec, synthesize_clip
from dart.rollout import GeneratorStack
from dart.skeleton import toy_skeleton
from dart.vae import PrimitiveVAE, VaeConfig


@pytest.fixture
def untrained_stack():
    """Tiny random-weight generator stack: valid shapes, no semantics."""
    torch.manual_seed(1234)
    vae_cfg = VaeConfig(latent_dim=8, layers=2, hidden=32, ff_dim=32, heads=2, dropout=0.0)
    den_cfg = DenoiserConfig(latent_dim=8, layers=2, hidden=32, ff_dim=32, heads=2, dropout=0.0, steps=10)
    return GeneratorStack(
        vae=PrimitiveVAE(vae_cfg),
        denoiser=Denoiser(den_cfg),
        schedule=cosine_schedule(10),
        latent_scale=1.0,
        skeleton=toy_skeleton(),
    )


@pytest.fixture
def stand_seed():
    clip = synthesize_clip(GaitSpec("stand", seed=0), 10)
    return clip[:2]
