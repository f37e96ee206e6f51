"""Variant table (full, no_or, no_gam) over seeds on a synthetic scene.

    python3 scripts/ablation.py --shape sphere --variants full,no_or --iters 2000 --out runs/or
"""

import argparse
import json
import logging

from gsurf.core.config import TrainConfig
from gsurf.pipeline import generate_scene
from gsurf.pipeline.ablation import VARIANTS, run_ablation


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--shape", default="sphere", choices=["sphere", "torus", "box-union"])
    p.add_argument("--variants", default="full,no_or,no_gam")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--iters", type=int, default=7000)
    p.add_argument("--out", default="runs/ablation")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    variants = [v for v in args.variants.split(",") if v]
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        p.error(f"unknown variants {sorted(unknown)}")
    table = run_ablation(generate_scene(args.shape, 16, 64), TrainConfig(total_iters=args.iters), variants,
                         range(args.seeds), out_dir=args.out)
    print(json.dumps(table["summary"], indent=2))


if __name__ == "__main__":
    main()
