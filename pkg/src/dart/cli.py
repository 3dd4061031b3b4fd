"""Command-line entry points: data, training, generation, control, serving.

Exit codes: 0 success, 1 validation error (bad config/arguments), 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig, default_desk_config, load_config
from .gaitgen import (
    LABEL_IDS,
    LABELS,
    build_dataset,
    default_transitions,
    load_dataset,
    save_dataset,
)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dartd", description="motion-primitive latent diffusion toolkit")
    sub = p.add_subparsers(dest="command")

    def common(sp, data=False, models=False):
        sp.add_argument("--config", type=Path, default=None, help="RunConfig JSON (desk defaults if omitted)")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", type=Path, default=Path("runs"), help="output directory or file")
        if data:
            sp.add_argument("--data", type=Path, default=None, help="dataset manifest.json (generated if omitted)")
        if models:
            sp.add_argument("--vae", type=Path, required=True)
            sp.add_argument("--denoiser", type=Path, required=True)

    common(sub.add_parser("gen-data", help="synthesize the labeled gait dataset"))
    common(sub.add_parser("train-vae", help="train the primitive VAE"), data=True)
    sp = sub.add_parser("train-denoiser", help="train the latent denoiser (scheduled)")
    common(sp, data=True)
    sp.add_argument("--vae", type=Path, required=True)
    sp = sub.add_parser("train-policy", help="train the goal-reaching policy with PPO")
    common(sp, models=True)
    sp.add_argument("--label", default=None, help="locomotion label (default from config)")

    sp = sub.add_parser("generate", help="roll out motion from a prompt timeline")
    common(sp, models=True)
    sp.add_argument("--prompts", required=True, help='e.g. "walk:5,hop_left:3" (label:primitive-count)')
    sp.add_argument("--sampler", choices=("ddpm", "ddim"), default=None)
    sp.add_argument("--guidance", type=float, default=None)

    sp = sub.add_parser("inbetween", help="optimize latent noises toward a keyframe")
    common(sp, models=True)
    sp.add_argument("--label", default="walk")
    sp.add_argument("--primitives", type=int, default=4)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--lr", type=float, default=0.05)

    sp = sub.add_parser("goal-opt", help="optimize latent noises under scene constraints")
    common(sp, models=True)
    sp.add_argument("--scene", type=Path, required=True)
    sp.add_argument("--goal", type=Path, required=True)
    sp.add_argument("--prompts", required=True)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--lr", type=float, default=0.05)

    sp = sub.add_parser("serve", help="real-time streaming service")
    common(sp, models=True)
    sp.add_argument("--policy", type=Path, default=None)
    sp.add_argument("--port", type=int, default=None, help="default 8707 or DARTD_PORT")
    sp.add_argument("--no-pacing", action="store_true", help="emit as fast as possible")

    sp = sub.add_parser("eval", help="metric report on generated motion")
    common(sp, models=True)

    sp = sub.add_parser("profile", help="throughput and latency benchmark")
    common(sp, models=True)
    sp.add_argument("--frames", type=int, default=5000)

    return p


def parse_prompts(text: str) -> list[tuple[int, int]]:
    timeline = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            name, count = part.rsplit(":", 1)
            count = int(count)
        else:
            name, count = part, 1
        if name not in LABEL_IDS:
            raise ConfigError(f"unknown label {name!r}; known: {', '.join(LABELS)}")
        timeline.append((LABEL_IDS[name], count))
    if not timeline:
        raise ConfigError("empty prompt timeline")
    return timeline


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_desk_config()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _build_or_load_dataset(cfg: RunConfig, args):
    if getattr(args, "data", None):
        return load_dataset(args.data)
    specs = cfg.build_specs()
    transitions = default_transitions(specs) if cfg.dataset.include_transitions else None
    return build_dataset(specs, cfg.dataset.frames_per_clip, cfg.build_skeleton(), transitions)


def _load_stack(args):
    from .rollout import GeneratorStack

    return GeneratorStack.load(args.vae, args.denoiser)


def _seed_history(stack, seed=0):
    from .gaitgen import GaitSpec, synthesize_clip

    return synthesize_clip(GaitSpec("stand", seed=seed), 10, stack.skeleton)[: stack.history_len]


def cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    ds = _build_or_load_dataset(cfg, args)
    path = save_dataset(ds, args.out)
    print(f"dataset: {len(ds.clips)} clips, {ds.window_count} windows -> {path}")
    return 0


def cmd_train_vae(args) -> int:
    from .vae import calibrate_latent_scale, save_vae, train_vae

    cfg = _load_run_config(args)
    ds = _build_or_load_dataset(cfg, args)
    model, curve = train_vae(ds, cfg.vae, cfg.vae_train, seed=cfg.seed)
    scale = calibrate_latent_scale(ds, model, seed=cfg.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    save_vae(args.out / "vae.bin", model, ds.skeleton, scale)
    (args.out / "vae_curve.json").write_text(json.dumps(curve, indent=2))
    print(f"vae trained: final loss {curve[-1]['total']:.4f}, latent scale {scale:.4f}")
    return 0


def cmd_train_denoiser(args) -> int:
    from .diffusion import save_denoiser, train_denoiser
    from .vae import load_vae

    cfg = _load_run_config(args)
    ds = _build_or_load_dataset(cfg, args)
    vae, _, scale = load_vae(args.vae)
    model, schedule, log = train_denoiser(vae, scale, ds, cfg.denoiser, cfg.denoiser_train, seed=cfg.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    save_denoiser(args.out / "denoiser.bin", model, schedule, scale)
    (args.out / "denoiser_log.json").write_text(json.dumps(log, indent=2))
    print(f"denoiser trained: {len(log)} log entries, final loss {log[-1]['loss']:.4f}")
    return 0


def cmd_train_policy(args) -> int:
    from .policy import ActorCritic, EnvConfig, GoalReachEnv, PolicyConfig, ppo_train, save_policy

    cfg = _load_run_config(args)
    stack = _load_stack(args)
    label = args.label or cfg.policy.label
    if label not in LABEL_IDS:
        raise ConfigError(f"unknown label {label!r}")
    env = GoalReachEnv(stack, LABEL_IDS[label], cfg.policy.env, seed=cfg.seed)
    policy = ActorCritic(PolicyConfig(obs_dim=env.obs_dim, action_dim=stack.latent_dim))
    policy, curves = ppo_train(env, policy, cfg.policy.ppo, seed=cfg.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    save_policy(args.out / f"policy_{label}.bin", policy, LABEL_IDS[label])
    (args.out / f"policy_{label}_curve.json").write_text(json.dumps(curves, indent=2))
    print(f"policy trained: final mean return {curves[-1]['mean_return']:.2f}")
    return 0


def cmd_generate(args) -> int:
    from .frames import save_motion
    from .rollout import expand_timeline, rollout

    cfg = _load_run_config(args)
    stack = _load_stack(args)
    timeline = parse_prompts(args.prompts)
    labels = expand_timeline(timeline)
    sampler = args.sampler or cfg.sampler
    w = cfg.guidance if args.guidance is None else args.guidance
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        motion, diag = rollout(stack, _seed_history(stack), labels, w=w, sampler=sampler, generator=gen)
    label_track = []
    frame = stack.history_len
    for label_id, count in timeline:
        label_track.append((label_id, frame, frame + count * stack.future_len))
        frame += count * stack.future_len
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_motion(args.out, motion.to(torch.float32), cfg.fps, stack.skeleton.joint_count, label_track)
    print(f"generated {motion.shape[0]} frames (seam gap {diag['max_seam_gap']:.2e}) -> {args.out}")
    return 0


def cmd_inbetween(args) -> int:
    from .control import KeyframeGoal, ObjectiveBundle, optimize_latents
    from .frames import save_motion
    from .gaitgen import GaitSpec, synthesize_clip
    from .metrics import goal_errors

    cfg = _load_run_config(args)
    stack = _load_stack(args)
    label_id = LABEL_IDS[args.label]
    n = args.primitives
    h, f = stack.history_len, stack.future_len
    layout = stack.layout

    # reference clip supplies the seed history and the goal keyframe
    ref = synthesize_clip(GaitSpec(args.label, speed=1.0, cadence=0.9, seed=cfg.seed + 1), h + n * f, stack.skeleton)
    seed_history = ref[:h]
    goal_frame = h + n * f - 1
    goal = KeyframeGoal(target_joints=layout.joints_of(ref[goal_frame]).to(torch.float64), frame_index=goal_frame)

    gen = torch.Generator().manual_seed(cfg.seed)
    result = optimize_latents(
        stack, ObjectiveBundle(goal), seed_history, [label_id] * n,
        steps=args.steps, lr=args.lr, generator=gen,
    )
    hist_err, goal_err = goal_errors(result.motion, ref[:h].to(result.motion.dtype), goal.target_joints, goal_frame, layout)
    args.out.mkdir(parents=True, exist_ok=True)
    save_motion(args.out / "inbetween.bin", result.motion.to(torch.float32), cfg.fps, stack.skeleton.joint_count)
    report = {
        "initial_goal_objective": result.initial_loss,
        "final_goal_objective": result.best_loss,
        "history_error_cm": hist_err,
        "goal_error_cm": goal_err,
        "steps": args.steps,
    }
    (args.out / "inbetween_report.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return 0


def cmd_goal_opt(args) -> int:
    from .control import ObjectiveBundle, load_goal, load_scene, optimize_latents
    from .frames import save_motion
    from .rollout import expand_timeline

    cfg = _load_run_config(args)
    stack = _load_stack(args)
    scene = load_scene(args.scene)
    goal = load_goal(args.goal)
    labels = expand_timeline(parse_prompts(args.prompts))
    gen = torch.Generator().manual_seed(cfg.seed)
    bundle = ObjectiveBundle(goal, scene, foot_joints=stack.skeleton.foot_joints)
    result = optimize_latents(
        stack, bundle, _seed_history(stack), labels, steps=args.steps, lr=args.lr, generator=gen
    )
    args.out.mkdir(parents=True, exist_ok=True)
    save_motion(args.out / "goal_opt.bin", result.motion.to(torch.float32), cfg.fps, stack.skeleton.joint_count)
    trace_path = args.out / "goal_opt_trace.json"
    trace_path.write_text(json.dumps({"initial": result.initial_loss, "best": result.best_loss, "trace": result.loss_trace}, indent=2))
    print(f"optimized: {result.initial_loss:.4f} -> {result.best_loss:.4f}")
    return 0


def cmd_serve(args) -> int:
    import asyncio
    import os

    from .server import serve_forever

    cfg = _load_run_config(args)
    stack = _load_stack(args)
    policy = None
    if args.policy:
        from .policy import load_policy

        policy = load_policy(args.policy)
    port = args.port if args.port is not None else int(os.environ.get("DARTD_PORT", "8707"))
    asyncio.run(serve_forever(stack, cfg, port, policy=policy, pacing=not args.no_pacing))
    return 0


def cmd_eval(args) -> int:
    from .metrics import extract_transition_window, jerk_metrics, skate, write_report
    from .rollout import expand_timeline, rollout

    cfg = _load_run_config(args)
    stack = _load_stack(args)
    layout = stack.layout
    gen = torch.Generator().manual_seed(cfg.seed)
    timeline = [(LABEL_IDS["walk"], 8), (LABEL_IDS["run"], 8), (LABEL_IDS["stand"], 4)]
    labels = expand_timeline(timeline)
    with torch.no_grad():
        motion, diag = rollout(stack, _seed_history(stack), labels, w=cfg.guidance, sampler=cfg.sampler, generator=gen)
    f = stack.future_len
    boundaries = [stack.history_len + 8 * f, stack.history_len + 16 * f]
    pjs, aujs = [], []
    for bnd in boundaries:
        window = extract_transition_window(motion, bnd, cfg.fps)
        pj, auj = jerk_metrics(window, layout)
        pjs.append(pj)
        aujs.append(auj)
    report = {
        "transition_peak_jerk": {"value": float(np.mean(pjs)), "unit": "m/s^3", "config": {"aggregation": "max-over-joints"}},
        "transition_area_under_jerk": {"value": float(np.mean(aujs)), "unit": "m/s^2", "config": {"aggregation": "max-over-joints"}},
        "skate": {"value": skate(motion, stack.skeleton.foot_joints, cfg.fps, layout), "unit": "cm/s", "config": {"contact_threshold_m": 0.03}},
        "seam_gap": {"value": diag["max_seam_gap"], "unit": "m", "config": {}},
    }
    args.out.mkdir(parents=True, exist_ok=True)
    write_report(args.out / "eval_report.json", report)
    print(json.dumps(report, indent=2))
    return 0


def cmd_profile(args) -> int:
    from .metrics import throughput_profile, write_report
    from .rollout import StreamSession

    cfg = _load_run_config(args)
    stack = _load_stack(args)
    session = StreamSession(stack, label_id=LABEL_IDS["walk"], w=cfg.guidance, sampler=cfg.sampler, seed=cfg.seed)
    session.stream_step()  # warm-up outside the timed window
    profile = throughput_profile(session, args.frames)
    report = {
        "throughput": {"value": profile["frames_per_s"], "unit": "frames/s", "config": {"frames": profile["frames"]}},
        "first_frame_latency": {"value": profile["first_frame_latency_s"], "unit": "s", "config": {}},
        "finite": {"value": float(profile["finite"]), "unit": "bool", "config": {}},
    }
    args.out.mkdir(parents=True, exist_ok=True)
    write_report(args.out / "profile_report.json", report)
    print(json.dumps(report, indent=2))
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-vae": cmd_train_vae,
    "train-denoiser": cmd_train_denoiser,
    "train-policy": cmd_train_policy,
    "generate": cmd_generate,
    "inbetween": cmd_inbetween,
    "goal-opt": cmd_goal_opt,
    "serve": cmd_serve,
    "eval": cmd_eval,
    "profile": cmd_profile,
}


def cli_dispatch(argv: list[str]) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help, 2 for usage errors; map usage errors to 1
        return 0 if e.code == 0 else 1
    if args.command is None:
        parser.print_usage()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
