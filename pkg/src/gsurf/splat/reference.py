"""Naive per-pixel renderer: every Gaussian tested against every pixel, no tiling, culling or early stop.

Kept deliberately simple; it is the oracle the tiled rasterizer is checked against.
"""

import numpy as np

from ..core.types import Camera, GaussianSet
from .render import ray_disk_intersect


def reference_render(camera: Camera, gaussians: GaussianSet, colors: np.ndarray) -> dict:
    H, W = camera.height, camera.width
    z_center = camera.world_to_camera(gaussians.centroids)[:, 2] if len(gaussians) else np.zeros(0)
    order = sorted(range(len(gaussians)), key=lambda i: (z_center[i], i))
    prims = [gaussians[i] for i in range(len(gaussians))]
    out = {
        "color": np.zeros((H, W, 3)),
        "alpha": np.zeros((H, W)),
        "expected_depth": np.zeros((H, W)),
        "median_depth": np.zeros((H, W)),
        "normal_map": np.zeros((H, W, 3)),
    }
    for row in range(H):
        for col in range(W):
            _, d = camera.ray(row, col)
            T = 1.0
            acc_w = acc_wz = 0.0
            median = None
            frags = []
            for i in order:
                hit = ray_disk_intersect(camera, (row, col), prims[i])
                if hit is None:
                    continue
                (u, v), z = hit
                a = prims[i].opacity * np.exp(-0.5 * (u * u + v * v))
                w = a * T
                n = prims[i].normal
                if n @ d > 0:
                    n = -n
                out["color"][row, col] += w * colors[i]
                out["normal_map"][row, col] += w * n
                acc_w += w
                acc_wz += w * z
                frags.append(z)
                T *= 1.0 - a
                if median is None and T < 0.5:
                    median = z
            out["alpha"][row, col] = acc_w
            out["expected_depth"][row, col] = acc_wz / max(acc_w, 1e-8)
            if median is None and frags:
                median = max(frags)
            out["median_depth"][row, col] = median or 0.0
    return out
