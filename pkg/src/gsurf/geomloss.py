"""SDF supervision losses, opacity entropy, query sampling and total-loss assembly.

Every loss returns ``(value, gradients)`` where the gradients are taken with
respect to the loss inputs (values, gradient vectors, normals, opacities).
All sums run as batch means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.config import TrainConfig

QUERY_BOUND = 1.5
LOSS_NAMES = ("rgb", "dep", "dnc", "pos", "eik", "off", "ori", "nor", "ent")
SDF_TERMS = ("pos", "eik", "off", "ori", "nor")
LOG_COLUMNS = ("iter", "l_rgb", "l_dep", "l_dnc", "l_pos", "l_eik", "l_off", "l_ori", "l_nor", "l_ent",
               "total", "n_gaussians", "mean_opacity")


@dataclass
class QueryBatch:
    surface_points: np.ndarray
    surface_index: np.ndarray  # which Gaussians the surface points came from
    uniform_points: np.ndarray
    near_points: np.ndarray

    @property
    def all_points(self) -> np.ndarray:
        return np.concatenate([self.surface_points, self.uniform_points, self.near_points])


def sample_queries(centroids: np.ndarray, config: TrainConfig, rng: np.random.Generator,
                   candidates: np.ndarray | None = None) -> QueryBatch:
    """Surface points from the Gaussian centroids, uniform points in [-1, 1]^3, jittered near-surface points.

    `candidates` restricts the surface draw to a subset of Gaussian indices.
    """
    pool = np.arange(len(centroids)) if candidates is None else np.asarray(candidates)
    if len(pool) > config.sdf_surface_samples:
        idx = np.sort(rng.choice(pool, config.sdf_surface_samples, replace=False))
    else:
        idx = pool.copy()
    surface = np.clip(centroids[idx], -QUERY_BOUND, QUERY_BOUND)
    uniform = rng.uniform(-1.0, 1.0, (config.sdf_uniform_samples, 3))
    if len(pool):
        base = centroids[rng.choice(pool, config.sdf_near_samples)]
    else:
        base = rng.uniform(-1.0, 1.0, (config.sdf_near_samples, 3))
    near = np.clip(base + rng.normal(0.0, config.near_sigma, base.shape), -QUERY_BOUND, QUERY_BOUND)
    return QueryBatch(surface, idx, uniform, near)


def _safe_normalize(v: np.ndarray, eps: float = 1e-12):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, eps), norm


def _normalize_backward(unit: np.ndarray, norm: np.ndarray, g_unit: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    proj = g_unit - unit * np.sum(unit * g_unit, axis=-1, keepdims=True)
    return proj / np.maximum(norm, eps)


def position_loss(values: np.ndarray) -> tuple[float, np.ndarray]:
    values = np.asarray(values, np.float64)
    if values.size == 0:
        return 0.0, np.zeros_like(values)
    n = values.size
    return float(np.abs(values).mean()), np.sign(values) / n


def eikonal_loss(gradients: np.ndarray) -> tuple[float, np.ndarray]:
    g = np.asarray(gradients, np.float64).reshape(-1, 3)
    if len(g) == 0:
        return 0.0, np.zeros_like(g)
    unit, norm = _safe_normalize(g)
    r = norm[:, 0] - 1.0
    return float(np.mean(r * r)), (2.0 * r / len(g))[:, None] * unit


def offsurface_loss(values: np.ndarray, alpha: float = 100.0) -> tuple[float, np.ndarray]:
    values = np.asarray(values, np.float64)
    if values.size == 0:
        return 0.0, np.zeros_like(values)
    e = np.exp(-alpha * np.abs(values))
    return float(e.mean()), -alpha * np.sign(values) * e / values.size


def orientation_loss(normals: np.ndarray, gradients: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean of 1 - |n . grad| over unit-normalized pairs; returns (loss, d/dnormals, d/dgradients)."""
    n = np.asarray(normals, np.float64).reshape(-1, 3)
    g = np.asarray(gradients, np.float64).reshape(-1, 3)
    gn = np.zeros_like(n)
    gg = np.zeros_like(g)
    nu, nn = _safe_normalize(n)
    gu, ng = _safe_normalize(g)
    ok = ng[:, 0] >= 1e-8
    count = int(ok.sum())
    if count == 0:
        return 0.0, gn, gg
    dot = np.sum(nu * gu, axis=1)
    loss = float(np.mean(1.0 - np.minimum(np.abs(dot[ok]), 1.0)))
    s = np.where(ok, -np.sign(dot) / count, 0.0)[:, None]
    gn = _normalize_backward(nu, nn, s * gu)
    gg = _normalize_backward(gu, ng, s * nu)
    return loss, gn, gg


def normal_map_loss(n_gs: np.ndarray, n_sdf: np.ndarray, alpha: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean over pixels with alpha > 0.5 of 1 - unit(N_gs) . unit(N_sdf); returns (loss, d/dN_gs, d/dN_sdf)."""
    a = np.asarray(n_gs, np.float64)
    b = np.asarray(n_sdf, np.float64)
    mask = np.asarray(alpha) > 0.5
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    count = int(mask.sum())
    if count == 0:
        return 0.0, ga, gb
    au, an = _safe_normalize(a)
    bu, bn = _safe_normalize(b)
    dot = np.sum(au * bu, axis=-1)
    loss = float(np.mean(1.0 - np.clip(dot[mask], -1.0, 1.0)))
    m = mask[..., None] / count
    ga = _normalize_backward(au, an, -m * bu)
    gb = _normalize_backward(bu, bn, -m * au)
    return loss, ga, gb


def entropy_loss(opacities: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of -o ln o (0 at o = 0 and o = 1) and its derivative in o."""
    o = np.asarray(opacities, np.float64)
    if o.size == 0:
        return 0.0, np.zeros_like(o)
    pos = o > 0
    logo = np.log(np.where(pos, o, 1.0))
    value = np.where(pos, -o * logo, 0.0)
    grad = np.where(pos, -(logo + 1.0), 0.0) / o.size
    return float(value.mean()), grad


def loss_weights(config: TrainConfig, iteration: int) -> dict[str, float]:
    """Weight of each named term at an iteration; SDF terms are off during warmup."""
    w = {
        "gs": 1.0,
        "rgb": 1.0,
        "dep": config.lambda_dep,
        "dnc": config.lambda_dnc,
        "pos": config.lambda_pos,
        "eik": config.lambda_eik,
        "off": config.lambda_off,
        "ori": config.lambda_ori,
        "nor": config.lambda_nor,
        "ent": config.lambda_ent,
    }
    if iteration < config.sdf_warmup_iters:
        for k in SDF_TERMS:
            w[k] = 0.0
    for k, start in (("dep", config.dep_from_iter), ("dnc", config.dnc_from_iter), ("ent", config.ent_from_iter)):
        if iteration < start:
            w[k] = 0.0
    return w


@dataclass
class LossTerm:
    value: float
    grads: dict  # parameter-group name -> gradient array


def assemble_total(parts: dict, config: TrainConfig, iteration: int) -> tuple[float, dict]:
    """Weighted sum of loss terms and the matching sum of their per-group gradients.

    `parts` maps a term name ("gs" for a pre-combined rendering loss, or any of
    LOSS_NAMES) to a LossTerm or to a bare float.
    """
    weights = loss_weights(config, iteration)
    total = 0.0
    grads: dict = {}
    for name, term in parts.items():
        if name not in weights:
            raise KeyError(f"unknown loss term {name!r}")
        w = weights[name]
        value = term.value if isinstance(term, LossTerm) else float(term)
        if w == 0.0:
            continue
        total += w * value
        if isinstance(term, LossTerm):
            for group, g in term.grads.items():
                if g is None:
                    continue
                grads[group] = w * g if group not in grads else grads[group] + w * g
    return total, grads


def log_row(iteration: int, values: dict, n_gaussians: int, mean_opacity: float, total: float) -> list:
    return [iteration] + [float(values.get(k, 0.0)) for k in LOSS_NAMES] + [total, n_gaussians, mean_opacity]
