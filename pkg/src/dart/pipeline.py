"""End-to-end desk-scale training pipeline with on-disk caching.

Each artifact is cached under a hash of exactly the configuration that
determines it (dataset -> VAE -> denoiser -> policy), so changing one stage's
hyperparameters only retrains from that stage down. Experiment scripts and
the acceptance suite share one artifact store instead of retraining per
invocation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import replace
from pathlib import Path

import torch

from .config import RunConfig
from .diffusion import save_denoiser, train_denoiser
from .gaitgen import LABEL_IDS, build_dataset, default_transitions, load_dataset, save_dataset
from .policy import ActorCritic, GoalReachEnv, PolicyConfig, ppo_train, save_policy
from .rollout import GeneratorStack
from .vae import calibrate_latent_scale, load_vae, save_vae, train_vae


def _hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=lambda o: dataclasses.asdict(o)).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


def dataset_key(cfg: RunConfig) -> str:
    # hash the resolved spec list, not the config fields: default_specs()
    # changes must invalidate the cache
    return _hash(
        "data", cfg.seed, cfg.skeleton, cfg.dataset.frames_per_clip,
        cfg.dataset.include_transitions, cfg.build_specs(),
    )


def vae_key(cfg: RunConfig, vae_cfg=None) -> str:
    return _hash("vae", dataset_key(cfg), vae_cfg or cfg.vae, cfg.vae_train, cfg.seed)


def denoiser_key(cfg: RunConfig) -> str:
    return _hash("denoiser", vae_key(cfg), cfg.denoiser, cfg.denoiser_train, cfg.seed)


def policy_key(cfg: RunConfig, label: str) -> str:
    return _hash("policy", denoiser_key(cfg), cfg.policy, label, cfg.seed)


def desk_run_dir(root: Path, cfg: RunConfig, tag: str = "desk") -> Path:
    return Path(root) / tag


def ensure_dataset(run_dir: Path, cfg: RunConfig):
    run_dir = Path(run_dir)
    manifest = run_dir / f"data-{dataset_key(cfg)}" / "manifest.json"
    if manifest.exists():
        return load_dataset(manifest)
    specs = cfg.build_specs()
    transitions = default_transitions(specs) if cfg.dataset.include_transitions else None
    ds = build_dataset(specs, cfg.dataset.frames_per_clip, cfg.build_skeleton(), transitions)
    save_dataset(ds, manifest.parent)
    return ds


def holdout_dataset(cfg: RunConfig, seed_offset: int = 10_000):
    """Fresh clips from re-seeded specs: same distribution, disjoint data."""
    specs = [replace(s, seed=s.seed + seed_offset) for s in cfg.build_specs()]
    transitions = default_transitions(specs) if cfg.dataset.include_transitions else None
    return build_dataset(specs, cfg.dataset.frames_per_clip, cfg.build_skeleton(), transitions)


def ensure_vae(run_dir: Path, cfg: RunConfig, dataset, name: str = "vae", vae_cfg=None, log=print):
    run_dir = Path(run_dir)
    key = vae_key(cfg, vae_cfg)
    path = run_dir / f"{name}-{key}.bin"
    curve_path = run_dir / f"{name}-{key}_curve.json"
    if path.exists():
        return load_vae(path), json.loads(curve_path.read_text())
    vae_cfg = vae_cfg or cfg.vae
    t0 = time.time()
    model, curve = train_vae(dataset, vae_cfg, cfg.vae_train, seed=cfg.seed)
    scale = calibrate_latent_scale(dataset, model, seed=cfg.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_vae(path, model, dataset.skeleton, scale)
    curve_path.write_text(json.dumps(curve, indent=2))
    log(f"[pipeline] trained {name} in {time.time() - t0:.0f}s "
        f"(loss {curve[0]['total']:.3f} -> {curve[-1]['total']:.3f}, scale {scale:.3f})")
    return (model, dataset.skeleton, scale), curve


def ensure_denoiser(run_dir: Path, cfg: RunConfig, dataset, vae, latent_scale, log=print):
    from .diffusion import load_denoiser

    run_dir = Path(run_dir)
    key = denoiser_key(cfg)
    path = run_dir / f"denoiser-{key}.bin"
    log_path = run_dir / f"denoiser-{key}_log.json"
    if path.exists():
        return load_denoiser(path), json.loads(log_path.read_text())
    t0 = time.time()
    model, schedule, train_log = train_denoiser(
        vae, latent_scale, dataset, cfg.denoiser, cfg.denoiser_train, seed=cfg.seed
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    save_denoiser(path, model, schedule, latent_scale)
    log_path.write_text(json.dumps(train_log, indent=2))
    log(f"[pipeline] trained denoiser in {time.time() - t0:.0f}s "
        f"(loss {train_log[0]['loss']:.3f} -> {train_log[-1]['loss']:.3f})")
    return (model, schedule, latent_scale), train_log


def ensure_policy(run_dir: Path, cfg: RunConfig, stack: GeneratorStack, label: str = "walk", log=print):
    from .policy import load_policy

    run_dir = Path(run_dir)
    key = policy_key(cfg, label)
    path = run_dir / f"policy_{label}-{key}.bin"
    curve_path = run_dir / f"policy_{label}-{key}_curve.json"
    if path.exists():
        policy, label_id, _ = load_policy(path)
        return policy, label_id, json.loads(curve_path.read_text())
    t0 = time.time()
    label_id = LABEL_IDS[label]
    env = GoalReachEnv(stack, label_id, cfg.policy.env, seed=cfg.seed)
    policy = ActorCritic(PolicyConfig(obs_dim=env.obs_dim, action_dim=stack.latent_dim))
    policy, curves = ppo_train(env, policy, cfg.policy.ppo, seed=cfg.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_policy(path, policy, label_id)
    curve_path.write_text(json.dumps(curves, indent=2))
    log(f"[pipeline] trained policy[{label}] in {time.time() - t0:.0f}s "
        f"(return {curves[0]['mean_return']:.1f} -> {curves[-1]['mean_return']:.1f}, "
        f"success {curves[-1]['success_rate']:.2f})")
    return policy, label_id, curves


def ensure_stack(run_dir: Path, cfg: RunConfig, dataset=None, log=print) -> GeneratorStack:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dataset = dataset or ensure_dataset(run_dir, cfg)
    (vae, skel, scale), _ = ensure_vae(run_dir, cfg, dataset, log=log)
    (denoiser, schedule, scale2), _ = ensure_denoiser(run_dir, cfg, dataset, vae, scale, log=log)
    return GeneratorStack(vae=vae, denoiser=denoiser, schedule=schedule, latent_scale=scale2, skeleton=skel)


def denoiser_log_path(run_dir: Path, cfg: RunConfig) -> Path:
    return Path(run_dir) / f"denoiser-{denoiser_key(cfg)}_log.json"
