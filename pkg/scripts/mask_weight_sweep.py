"""Stage-1 held-out label error as a function of the mask-loss weight."""
import argparse
import logging

from scenetext import experiments as ex

ap = argparse.ArgumentParser()
ap.add_argument("--weights", default="0,0.3,0.6,0.9")
ap.add_argument("--seeds", default="0,1")
ap.add_argument("--iters", type=int, default=3000)
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

cfg = ex.DeskConfig(stage1_iters=args.iters)
print("weight\tseed\tlabel_error\tmask_distance")
for seed in map(int, args.seeds.split(",")):
    for w in map(float, args.weights.split(",")):
        run = ex.stage1_only(seed, w, cfg)
        print(f"{w:g}\t{seed}\t{run.label_error:.4f}\t{run.checkpoints[-1][1]['mask_distance']:.2f}", flush=True)
