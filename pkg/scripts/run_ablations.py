"""Loss-weight ablations: KL weight (reconstruction fidelity) and auxiliary
weight (reconstruction smoothness), evaluated on held-out clips.

    python3 scripts/run_ablations.py [--cache DIR]
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dart.config import default_desk_config
from dart.pipeline import desk_run_dir, ensure_dataset, ensure_vae, holdout_dataset
from dart.ablations import heldout_reconstruction_error, reconstruction_jerk


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cache", type=Path, default=Path(".cache"))
    args = ap.parse_args()
    torch.set_num_threads(1)

    cfg = default_desk_config()
    run_dir = desk_run_dir(args.cache, cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    ds = ensure_dataset(run_dir, cfg)
    held = holdout_dataset(cfg)

    (vae_base, _, _), _ = ensure_vae(run_dir, cfg, ds, name="vae")
    (vae_kl1, _, _), _ = ensure_vae(run_dir, cfg, ds, name="vae_kl1", vae_cfg=replace(cfg.vae, w_kl=1.0))
    (vae_aux0, _, _), _ = ensure_vae(run_dir, cfg, ds, name="vae_aux0", vae_cfg=replace(cfg.vae, w_aux=0.0))

    rec_base = heldout_reconstruction_error(vae_base, held)
    rec_kl1 = heldout_reconstruction_error(vae_kl1, held)
    jerk_base = reconstruction_jerk(vae_base, held)
    jerk_aux0 = reconstruction_jerk(vae_aux0, held)
    report = {
        "heldout_rec_error": {"w_kl=1e-6": rec_base, "w_kl=1": rec_kl1},
        "reconstruction_jerk": {"w_aux=100": jerk_base, "w_aux=0": jerk_aux0},
        "orderings": {
            "kl_ablation_holds": rec_kl1 > rec_base,
            "aux_ablation_holds": jerk_aux0 > jerk_base,
        },
    }
    out = run_dir / "ablation_report.json"
    out.write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
