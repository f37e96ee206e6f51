"""Fit the SDF alone to oriented samples of an analytic sphere and score the marching-cubes mesh.

    python3 scripts/fit_points.py [--points 5000] [--iters 2000] [--radius 0.6]
"""

import argparse
import json
import time

import numpy as np

from gsurf.core.config import TrainConfig
from gsurf.extract import SampledSurface, evaluate, marching_cubes, sample_mesh
from gsurf.pipeline.fit import fit_sdf_to_points, sphere_samples


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--points", type=int, default=5000)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--radius", type=float, default=0.6)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    t = time.perf_counter()
    cfg = TrainConfig(seed=args.seed)
    points, normals = sphere_samples(args.points, args.radius, args.seed)
    history = []
    net = fit_sdf_to_points(points, normals, cfg, args.iters, history=history)
    net.dtype = np.float64
    mesh = marching_cubes(net, args.resolution).largest_component()
    gt = SampledSurface(*sphere_samples(100_000, args.radius, args.seed + 1))
    record = evaluate(sample_mesh(mesh, 100_000, args.seed), gt)
    record.update(loss_first=history[0], loss_last=history[-1], euler_characteristic=mesh.euler_characteristic(),
                  seconds=time.perf_counter() - t)
    print(json.dumps(record))


if __name__ == "__main__":
    main()
