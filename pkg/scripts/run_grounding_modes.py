"""Trained-grounder accuracy under each language mode, averaged over split seeds.

Usage: python scripts/run_grounding_modes.py [--objects-per-category 20] [--seeds 3] [--split object-wise]
"""
import argparse
import logging

import numpy as np
from common import load_or_generate

from partgrasp.experiment import mode_study
from partgrasp.language import MODES
from partgrasp.splits import SPLIT_MODES, SplitSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", help="dataset root written by `partgrasp gen` (default: generate in memory)")
    ap.add_argument("--objects-per-category", type=int, default=20)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--split", default="object-wise", choices=SPLIT_MODES)
    ap.add_argument("--modes", default=",".join(MODES))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    objects = load_or_generate(args.data, args.objects_per_category, jobs=args.jobs)
    modes = tuple(m for m in args.modes.split(",") if m)
    study = mode_study(objects, modes, range(args.seeds), SplitSpec(args.split))
    cols = ("accuracy", "part_avg_iou", "object_avg_iou", "instance_avg_iou")
    print(f"{'mode':<30}" + "".join(f"{c:>18}" for c in cols))
    for mode in modes:
        means = [np.mean([getattr(m, c) for m in study[mode]]) for c in cols]
        print(f"{mode:<30}" + "".join(f"{v:>18.3f}" for v in means))


if __name__ == "__main__":
    main()
