"""Fit the SDF network to an oriented point cloud with the geometric losses alone."""

from __future__ import annotations

import numpy as np

from ..core.config import TrainConfig
from ..geomloss import eikonal_loss, offsurface_loss, orientation_loss, position_loss, sample_queries
from ..neural import AdamState, FieldNetwork, SdfEvaluation, adam_step
from .train import build_networks


def sphere_samples(count: int, radius: float = 0.6, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Uniform points on a sphere about the origin with outward normals."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return radius * d, d


def fit_sdf_to_points(points: np.ndarray, normals: np.ndarray, config: TrainConfig, iters: int = 2000,
                      net: FieldNetwork | None = None, history: list | None = None) -> FieldNetwork:
    """Adam on lambda_pos L_pos + lambda_eik L_eik + lambda_off L_off + lambda_ori L_ori.

    Starts from the sphere-initialized network unless `net` is given; appends the
    per-iteration weighted loss to `history` when provided.
    """
    points = np.asarray(points, np.float64).reshape(-1, 3)
    normals = np.asarray(normals, np.float64).reshape(-1, 3)
    if len(points) != len(normals) or len(points) == 0:
        raise ValueError("need equally many points and normals, at least one")
    if net is None:
        net, _ = build_networks(config.replace(use_appearance_net=False), config.seed)
    rng = np.random.default_rng(config.seed)
    adam = AdamState.zeros_like(net.params)
    for _ in range(iters):
        q = sample_queries(points, config, rng)
        ns, nu = len(q.surface_points), len(q.uniform_points)
        ev = SdfEvaluation(net, q.all_points, config.fd_step)
        g_val = np.zeros(len(ev.value))
        g_grad = np.zeros_like(ev.gradient)
        surf, uni = slice(0, ns), slice(ns, ns + nu)

        l_pos, gv = position_loss(ev.value[surf])
        g_val[surf] += config.lambda_pos * gv
        l_eik, gg = eikonal_loss(ev.gradient[ns:])
        g_grad[ns:] += config.lambda_eik * gg
        l_off, gv = offsurface_loss(ev.value[uni], config.alpha_off)
        g_val[uni] += config.lambda_off * gv
        l_ori, _, gg = orientation_loss(normals[q.surface_index], ev.gradient[surf])
        g_grad[surf] += config.lambda_ori * gg

        grads, _ = ev.backward(g_val, g_grad)
        net.params, adam = adam_step(net.params, grads, adam, config.lr_sdf)
        if history is not None:
            history.append(config.lambda_pos * l_pos + config.lambda_eik * l_eik
                           + config.lambda_off * l_off + config.lambda_ori * l_ori)
    return net
