"""Train the full desk-scale stack (dataset -> VAE -> denoiser -> walk policy).

Artifacts land in .cache/desk-<confighash>/ and are reused if present.

    python3 scripts/train_desk.py [--config CONFIG.json] [--cache DIR] [--policy]
"""

import argparse
import sys
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dart.config import default_desk_config, load_config
from dart.pipeline import desk_run_dir, ensure_dataset, ensure_policy, ensure_stack


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--cache", type=Path, default=Path(".cache"))
    ap.add_argument("--policy", action="store_true", help="also train the walk policy")
    args = ap.parse_args()

    torch.set_num_threads(1)  # tiny models: thread contention dominates otherwise
    cfg = load_config(args.config) if args.config else default_desk_config()
    run_dir = desk_run_dir(args.cache, cfg)
    print(f"run dir: {run_dir}")
    ds = ensure_dataset(run_dir, cfg)
    print(f"dataset: {len(ds.clips)} clips, {ds.window_count} windows")
    stack = ensure_stack(run_dir, cfg, dataset=ds)
    print(f"stack ready: latent scale {stack.latent_scale:.3f}")
    if args.policy:
        policy, label_id, curves = ensure_policy(run_dir, cfg, stack, label=cfg.policy.label)
        print(f"policy ready: last curve entry {curves[-1]}")


if __name__ == "__main__":
    main()
