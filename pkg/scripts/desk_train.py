"""Full desk-scale staged training for one seed; prints held-out checkpoints."""
import argparse
import logging

from scenetext import experiments as ex

ap = argparse.ArgumentParser()
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default="desk_model.tcnn")
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

run = ex.full_model(args.seed)
for it, m in run.checkpoints:
    print(f"{it}\tlabel_error={m['label_error']:.4f}\tmask_distance={m['mask_distance']:.3f}")
print(f"binary_error={run.binary_error:.4f} seconds={run.seconds:.0f}")
run.model.save(args.out)
