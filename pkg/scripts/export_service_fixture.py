"""Ensure the desk-scale artifacts (stack + walk policy) exist and print their
paths as JSON. The frontend integration tests call this before spawning the
service; after the first (training) run it returns instantly from cache.

    python3 scripts/export_service_fixture.py [--cache DIR] [--no-policy]
"""

import argparse
import json
import sys
from pathlib import Path

import torch

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from dart.config import default_desk_config
from dart.pipeline import (
    denoiser_key,
    desk_run_dir,
    ensure_dataset,
    ensure_policy,
    ensure_stack,
    policy_key,
    vae_key,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cache", type=Path, default=ROOT / ".cache")
    ap.add_argument("--no-policy", action="store_true")
    args = ap.parse_args()
    torch.set_num_threads(1)

    cfg = default_desk_config()
    run_dir = desk_run_dir(args.cache, cfg)
    ds = ensure_dataset(run_dir, cfg)
    ensure_stack(run_dir, cfg, dataset=ds, log=lambda m: print(m, file=sys.stderr))
    paths = {
        "vae": str(run_dir / f"vae-{vae_key(cfg)}.bin"),
        "denoiser": str(run_dir / f"denoiser-{denoiser_key(cfg)}.bin"),
    }
    if not args.no_policy:
        stack = ensure_stack(run_dir, cfg, dataset=ds)
        ensure_policy(run_dir, cfg, stack, label="walk", log=lambda m: print(m, file=sys.stderr))
        paths["policy"] = str(run_dir / f"policy_walk-{policy_key(cfg, 'walk')}.bin")
    print(json.dumps(paths))


if __name__ == "__main__":
    main()
