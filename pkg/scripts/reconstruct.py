"""Synthesize a scene, train, extract the mesh and score it against the ground truth.

    python3 scripts/reconstruct.py --shape torus --out runs/torus [--iters 7000] [--seed 0]
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from gsurf.core.config import TrainConfig
from gsurf.core.io import export_mesh_ply
from gsurf.extract import evaluate, marching_cubes, sample_mesh
from gsurf.pipeline import generate_scene, train


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--shape", default="sphere", choices=["sphere", "torus", "box-union"])
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--out", default="runs/reconstruct")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    cfg = cfg.replace(seed=args.seed, **({"total_iters": args.iters} if args.iters else {}))
    out = Path(args.out)
    scene = generate_scene(args.shape, args.views, args.res)
    scene.save(out / "scene")

    t = time.perf_counter()
    state, _ = train(scene, cfg, out / "run", progress_every=250)
    sdf = state.sdf_net.copy()
    sdf.dtype = np.float64
    mesh = marching_cubes(sdf, cfg.mc_resolution).largest_component()
    export_mesh_ply(mesh, out / "mesh.ply", binary=True)
    record = evaluate(sample_mesh(mesh, 100_000, cfg.seed), sample_mesh(scene.mesh, 100_000, cfg.seed))
    record.update(shape=args.shape, euler_characteristic=mesh.euler_characteristic(),
                  n_gaussians=len(state.gaussians), seconds=time.perf_counter() - t)
    (out / "metrics.json").write_text(json.dumps(record, indent=2))
    print(json.dumps(record))


if __name__ == "__main__":
    main()
