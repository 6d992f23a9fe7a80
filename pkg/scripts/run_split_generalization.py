"""Category generalization: trained grounder on related vs non-related category splits.

Usage: python scripts/run_split_generalization.py [--objects-per-category 10] [--seeds 3]
"""
import argparse
import logging

import numpy as np
from common import load_or_generate

from partgrasp.experiment import mode_study
from partgrasp.splits import SplitSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", help="dataset root written by `partgrasp gen` (default: generate in memory)")
    ap.add_argument("--objects-per-category", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--mode", default="known_all")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    objects = load_or_generate(args.data, args.objects_per_category, jobs=args.jobs)
    print(f"{'split':<14}{'accuracy':>12}{'part IoU':>12}{'instance IoU':>14}")
    for split in ("related", "non_related"):
        runs = mode_study(objects, (args.mode,), range(args.seeds), SplitSpec(split))[args.mode]
        acc, part, inst = (np.mean([getattr(m, k) for m in runs])
                           for k in ("accuracy", "part_avg_iou", "instance_avg_iou"))
        print(f"{split:<14}{acc:>12.3f}{part:>12.3f}{inst:>14.3f}")


if __name__ == "__main__":
    main()
