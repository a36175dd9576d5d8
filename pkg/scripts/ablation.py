"""Binary-only vs full multi-task model, and mask-pretrained vs plain label training."""
import argparse
import logging

import numpy as np

from scenetext import experiments as ex

ap = argparse.ArgumentParser()
ap.add_argument("--seeds", default="0,1,2")
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

rows = {"full binary error": [], "binary-only binary error": [], "mask-pretrained label error": [], "no-mask label error": []}
for seed in map(int, args.seeds.split(",")):
    full = ex.full_model(seed)
    rows["full binary error"].append(full.binary_error)
    rows["mask-pretrained label error"].append(full.label_error)
    rows["binary-only binary error"].append(ex.binary_only(seed).binary_error)
    rows["no-mask label error"].append(ex.stage1_only(seed, 0.0).label_error)
for name, vals in rows.items():
    print(f"{name:30s} mean {np.mean(vals):.4f}  " + " ".join(f"{v:.4f}" for v in vals))
