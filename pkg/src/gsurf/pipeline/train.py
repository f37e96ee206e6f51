"""Joint optimization of the Gaussian disks, the SDF network and the appearance network."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core.config import TrainConfig
from ..core.io import load_checkpoint, save_checkpoint
from ..core.types import GaussianSet, logistic, logit, normalize_quaternions
from ..geomloss import (LOG_COLUMNS, LossTerm, assemble_total, eikonal_loss, entropy_loss, log_row,
                        normal_map_loss, offsurface_loss, orientation_loss, position_loss, sample_queries)
from ..neural import (AdamState, AppearanceEvaluation, FieldNetwork, SdfEvaluation, adam_step, init_uniform,
                      make_appearance_network, make_sdf_network, sphere_init)
from ..splat import RenderUpstream, depth_distortion_loss, depth_normal_consistency_loss, rasterize, render_backward, rgb_loss

log = logging.getLogger(__name__)

GAUSSIAN_GROUPS = GaussianSet.PARAM_FIELDS


class TrainingDiverged(RuntimeError):
    pass


def init_gaussians(count: int, seed: int = 0, extent: float = 0.8) -> GaussianSet:
    """Random disks: uniform centroids in [-extent, extent]^3, uniform rotations, opacity 0.5.

    Both scales equal (volume / count)^(1/3), so the 2-sigma disk radius is
    about twice the mean spacing of the centroids.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    centroids = rng.uniform(-extent, extent, (count, 3))
    q = normalize_quaternions(rng.normal(size=(count, 4)))
    q *= np.where(q[:, :1] < 0, -1.0, 1.0)
    sigma = ((2 * extent) ** 3 / count) ** (1.0 / 3.0)
    log_scales = np.full((count, 2), np.log(sigma))
    return GaussianSet(centroids, q, log_scales, np.zeros(count), np.full((count, 3), 0.5))


def build_networks(config: TrainConfig, seed: int = 0) -> tuple[FieldNetwork, FieldNetwork | None]:
    """Sphere-initialized SDF network and (unless disabled) a randomly initialized appearance network."""
    sdf, app = _empty_networks(config)
    ss = np.random.SeedSequence(seed).spawn(2)
    # the fit runs in float64 whatever the training arithmetic
    dtype, sdf.dtype = sdf.dtype, np.float64
    sphere_init(sdf, config.sphere_radius, seed=int(ss[0].generate_state(1)[0]))
    sdf.dtype = dtype
    if app is not None:
        init_uniform(app, seed=int(ss[1].generate_state(1)[0]))
        # start near a uniform mid-gray instead of large random colors
        W, b = app.layers()[-1]
        W *= 0.1
        b[:] = 0.5
    return sdf, app


@dataclass
class TrainState:
    iteration: int
    gaussians: GaussianSet
    sdf_net: FieldNetwork
    app_net: FieldNetwork | None
    adam: dict  # group name -> AdamState
    grad_accum: np.ndarray
    grad_count: np.ndarray
    rng: np.random.Generator
    peak_weight: np.ndarray | None = None  # largest blending weight since the last densification

    def __post_init__(self):
        if self.peak_weight is None:
            self.peak_weight = np.zeros(len(self.gaussians))

    @classmethod
    def initial(cls, config: TrainConfig) -> TrainState:
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        g = init_gaussians(config.n_gaussians, int(seeds[0].generate_state(1)[0]), config.init_extent)
        sdf, app = build_networks(config, int(seeds[1].generate_state(1)[0]))
        adam = {name: AdamState.zeros_like(getattr(g, name)) for name in GAUSSIAN_GROUPS}
        adam["sdf"] = AdamState.zeros_like(sdf.params)
        if app is not None:
            adam["app"] = AdamState.zeros_like(app.params)
        n = len(g)
        return cls(0, g, sdf, app, adam, np.zeros(n), np.zeros(n, dtype=np.int64), np.random.default_rng(seeds[2]))


# ---------------------------------------------------------------- densification

def densify_and_prune(state: TrainState, config: TrainConfig) -> TrainState:
    """Clone small / split large high-gradient disks, drop transparent ones, reset the gradient statistics."""
    g = state.gaussians
    n = len(g)
    mean_grad = state.grad_accum / np.maximum(state.grad_count, 1)
    hot = mean_grad > config.densify_grad_threshold
    size = np.exp(g.log_scales).max(axis=1)
    boundary = np.median(size) if n else 0.0
    budget = max(0, config.max_gaussians - n)
    hot_idx = np.nonzero(hot)[0]
    if len(hot_idx) > budget:
        hot_idx = hot_idx[np.argsort(-mean_grad[hot_idx], kind="stable")[:budget]]
        hot = np.zeros(n, dtype=bool)
        hot[hot_idx] = True
    clone = hot & (size <= boundary)
    split = hot & (size > boundary)

    keep = ~split
    parts = [np.nonzero(keep)[0], np.nonzero(clone)[0]]
    split_idx = np.nonzero(split)[0]
    src = np.concatenate(parts + [split_idx, split_idx])
    new = g.select(src)
    if len(split_idx):
        k = len(split_idx)
        start = len(src) - 2 * k
        R = g.rotations[split_idx]
        scale = np.exp(g.log_scales[split_idx])
        for j in range(2):
            eps = state.rng.normal(size=(k, 2)) * scale
            offset = eps[:, :1] * R[:, :, 0] + eps[:, 1:] * R[:, :, 1]
            rows = slice(start + j * k, start + (j + 1) * k)
            new.centroids[rows] = g.centroids[split_idx] + offset
            new.log_scales[rows] = g.log_scales[split_idx] - np.log(config.split_scale_divisor)
    adam = dict(state.adam)
    for name in GAUSSIAN_GROUPS:
        adam[name] = state.adam[name].select(src)

    alive = new.opacities >= config.prune_opacity_threshold
    if not alive.any():
        raise TrainingDiverged("all Gaussians pruned")
    new = new.select(alive)
    for name in GAUSSIAN_GROUPS:
        adam[name] = adam[name].select(alive)
    m = len(new)
    return TrainState(state.iteration, new, state.sdf_net, state.app_net, adam, np.zeros(m),
                      np.zeros(m, dtype=np.int64), state.rng)


def prune_hidden(state: TrainState, config: TrainConfig) -> TrainState:
    """Drop disks whose peak blending weight since the last densification stayed below the threshold.

    Such disks are buried behind others in every view seen, so the photometric loss
    cannot clear them, yet their centroids would still supervise the SDF.
    """
    keep = state.peak_weight >= config.prune_hidden_threshold
    if keep.all():
        return state
    if not keep.any():
        raise TrainingDiverged("all Gaussians hidden")
    idx = np.nonzero(keep)[0]
    adam = dict(state.adam)
    for name in GAUSSIAN_GROUPS:
        adam[name] = state.adam[name].select(idx)
    return TrainState(state.iteration, state.gaussians.select(idx), state.sdf_net, state.app_net, adam,
                      state.grad_accum[idx], state.grad_count[idx], state.rng, state.peak_weight[idx])


def reset_opacity(state: TrainState, value: float) -> None:
    g = state.gaussians
    g.opacity_logits = np.minimum(g.opacity_logits, logit(value))
    state.adam["opacity_logits"] = AdamState.zeros_like(g.opacity_logits)


# ---------------------------------------------------------------- one iteration

class _Rows:
    """Named row blocks of one stacked SDF evaluation."""

    def __init__(self):
        self.blocks: dict[str, slice] = {}
        self.points: list[np.ndarray] = []
        self.n = 0

    def add(self, name: str, pts: np.ndarray) -> slice:
        s = slice(self.n, self.n + len(pts))
        self.blocks[name] = s
        self.points.append(pts)
        self.n += len(pts)
        return s

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.points) if self.points else np.zeros((0, 3))


def _unit(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(norm, 1e-12), norm


def _unit_backward(unit, norm, g):
    return (g - unit * np.sum(unit * g, axis=-1, keepdims=True)) / np.maximum(norm, 1e-12)


def _log_linear(start: float, end: float, config: TrainConfig, iteration: int) -> float:
    t = min(max(iteration / max(config.total_iters, 1), 0.0), 1.0)
    return float(np.exp((1 - t) * np.log(start) + t * np.log(end)))


def centroid_lr(config: TrainConfig, iteration: int) -> float:
    return _log_linear(config.lr_centroid_init, config.lr_centroid_final, config, iteration)


def sdf_lr(config: TrainConfig, iteration: int) -> float:
    return _log_linear(config.lr_sdf, config.lr_sdf_final, config, iteration)


def train_step(state: TrainState, cameras: list, images: list, config: TrainConfig, masks: list | None = None) -> dict:
    """One optimizer iteration on the round-robin camera; returns the loss breakdown.

    With masks and `random_background`, the target becomes image + (1 - mask) * bg
    and the render color + (1 - alpha) * bg for a random bg color, so empty space
    must be transparent rather than merely dark.
    """
    it = state.iteration
    cam_idx = it % len(cameras)
    cam, target = cameras[cam_idx], images[cam_idx]
    g = state.gaussians
    n = len(g)
    rng = state.rng
    post = it >= config.sdf_warmup_iters
    gam = state.app_net is not None
    H, W = cam.height, cam.width
    for name in GAUSSIAN_GROUPS:
        if not np.isfinite(getattr(g, name)).all():
            raise TrainingDiverged(f"non-finite Gaussian {name} at iteration {it}")

    out = rasterize(cam, g)
    vis = out.visible
    peak = out.peak_weight()
    C = cam.center

    rows = _Rows()
    ev = None
    if post:
        # disks hidden behind the surface would pull the zero level set inward
        front = np.nonzero(peak >= config.surface_sample_min_weight)[0]
        q = sample_queries(g.centroids, config, rng, candidates=front)
        if gam:
            rows.add("app", g.centroids[vis])
            surface_rows = rows.blocks["app"].start + np.searchsorted(vis, q.surface_index)
        else:
            s = rows.add("surface", q.surface_points)
            surface_rows = np.arange(s.start, s.stop)
        rows.add("uniform", q.uniform_points)
        rows.add("near", q.near_points)
        covered = np.nonzero(out.alpha.reshape(-1) > 0.5)[0]
        if len(covered) > config.normal_map_pixels:
            covered = np.sort(rng.choice(covered, config.normal_map_pixels, replace=False))
        dirs = cam.pixel_directions().reshape(-1, 3)[covered]
        rows.add("pix", C + out.median_depth.reshape(-1)[covered, None] * dirs)
        ev = SdfEvaluation(state.sdf_net, rows.stacked(), config.fd_step)
        M = rows.n
        g_val = np.zeros(M)
        g_grad = np.zeros((M, 3))
        g_feat = np.zeros((M, ev.feature.shape[1])) if gam else None

    if gam:
        pv = g.centroids[vis]
        view = _unit(pv - C)[0]
        if post:
            sl = rows.blocks["app"]
            normal, normal_len = _unit(ev.gradient[sl])
            feature = ev.feature[sl]
        else:
            normal = np.zeros((len(vis), 3))
            feature = np.zeros((len(vis), state.app_net.encoding.block_dims[3]))
        app_eval = AppearanceEvaluation(state.app_net, pv, view, normal, feature)
        colors = np.zeros((n, 3))
        colors[vis] = app_eval.color
    else:
        colors = g.appearance_seeds
    out = out.with_colors(colors)

    parts: dict = {}
    shown = out.color
    bg = None
    if config.random_background and masks is not None:
        bg = rng.uniform(0.0, 1.0, 3)
        target = target + (1.0 - masks[cam_idx])[..., None] * bg
        shown = shown + (1.0 - out.alpha)[..., None] * bg
    l_rgb, g_img = rgb_loss(shown, target, ssim_weight=config.ssim_weight)
    up_rgb = RenderUpstream(color=g_img)
    if bg is not None:
        up_rgb.alpha = -(g_img @ bg)
    parts["rgb"] = LossTerm(l_rgb, {"render": up_rgb})
    l_dep, up_dep = depth_distortion_loss(out)
    parts["dep"] = LossTerm(l_dep, {"render": up_dep})
    l_dnc, up_dnc = depth_normal_consistency_loss(out)
    parts["dnc"] = LossTerm(l_dnc, {"render": up_dnc})
    # over the disks seen in this view only: under Adam a term reaching every disk
    # each step would move unseen disks at the full learning rate
    o = g.opacities[vis]
    l_ent, g_o = entropy_loss(o)
    g_ent = np.zeros(n)
    g_ent[vis] = g_o * o * (1 - o)
    parts["ent"] = LossTerm(l_ent, {"opacity_logits": g_ent})

    if post:
        def scatter(rows_idx, values, shape):
            full = np.zeros(shape)
            full[rows_idx] = values
            return full

        l, gv = position_loss(ev.value[surface_rows])
        parts["pos"] = LossTerm(l, {"sdf_value": scatter(surface_rows, gv, M)})
        eik_rows = np.r_[rows.blocks["uniform"], rows.blocks["near"]]
        l, gg = eikonal_loss(ev.gradient[eik_rows])
        parts["eik"] = LossTerm(l, {"sdf_gradient": scatter(eik_rows, gg, (M, 3))})
        un = rows.blocks["uniform"]
        l, gv = offsurface_loss(ev.value[un], config.alpha_off)
        parts["off"] = LossTerm(l, {"sdf_value": scatter(un, gv, M)})
        # disk normals are treated as constants here: the SDF is fit to the disks
        l, _, gg = orientation_loss(g.normals[q.surface_index], ev.gradient[surface_rows])
        parts["ori"] = LossTerm(l, {"sdf_gradient": scatter(surface_rows, gg, (M, 3))})

        pix = rows.blocks["pix"]
        unit, ulen = _unit(ev.gradient[pix])
        if config.sdf_normals_face_camera:
            flip = np.where(np.sum(unit * dirs, axis=1) > 0, -1.0, 1.0)[:, None]
        else:
            # a visible surface faces the camera, so the unflipped SDF normal must too
            flip = np.ones((len(covered), 1))
        n_gs = out.normal_map.reshape(-1, 3)[covered]
        l, ga, gb = normal_map_loss(n_gs, flip * unit, np.ones(len(covered)))
        nor_grads = {}
        if config.normal_loss_updates in ("both", "gaussians"):
            nm = np.zeros((H * W, 3))
            nm[covered] = ga
            nor_grads["render"] = RenderUpstream(normal_map=nm.reshape(H, W, 3))
        if config.normal_loss_updates in ("both", "sdf"):
            nor_grads["sdf_gradient"] = scatter(pix, _unit_backward(unit, ulen, flip * gb), (M, 3))
        parts["nor"] = LossTerm(l, nor_grads)

    for name, term in parts.items():
        if not np.isfinite(term.value):
            raise TrainingDiverged(f"non-finite loss term '{name}' at iteration {it}")
    total, grads = assemble_total(parts, config, it)
    if not np.isfinite(total):
        raise TrainingDiverged(f"non-finite total loss at iteration {it}")

    gr = render_backward(out, grads.get("render", RenderUpstream()))
    ggrads = {
        "centroids": gr.centroids,
        "quaternions": gr.quaternions,
        "log_scales": gr.log_scales,
        "opacity_logits": gr.opacity_logits + grads.get("opacity_logits", 0.0),
        "appearance_seeds": np.zeros((n, 3)),
    }
    if gam:
        g_app, _, _, g_normal, g_feature = app_eval.backward(gr.colors[vis])
        if post:
            sl = rows.blocks["app"]
            g_grad[sl] += _unit_backward(normal, normal_len, g_normal)
            g_feat[sl] += g_feature
    else:
        ggrads["appearance_seeds"] = gr.colors

    # view-space positional gradient for densification, in NDC units
    if len(vis):
        gcam = gr.centroids[vis] @ cam.R.T
        z = cam.world_to_camera(g.centroids[vis])[:, 2]
        ndc = np.hypot(gcam[:, 0] * z / cam.fx * W / 2, gcam[:, 1] * z / cam.fy * H / 2)
        state.grad_accum[vis] += ndc
        state.grad_count[vis] += 1
    np.maximum(state.peak_weight, peak, out=state.peak_weight)

    lrs = {
        "centroids": centroid_lr(config, it),
        "quaternions": config.lr_rotation,
        "log_scales": config.lr_scale,
        "opacity_logits": config.lr_opacity,
        "appearance_seeds": 0.0 if gam else config.lr_color,
    }
    for name in GAUSSIAN_GROUPS:
        if lrs[name] == 0.0:
            continue
        new, state.adam[name] = adam_step(getattr(g, name), ggrads[name], state.adam[name], lrs[name])
        setattr(g, name, new)
    g.quaternions = normalize_quaternions(g.quaternions)
    if gam:
        state.app_net.params, state.adam["app"] = adam_step(state.app_net.params, g_app, state.adam["app"],
                                                            config.lr_appearance)
    if post:
        for key, arr in (("sdf_value", g_val), ("sdf_gradient", g_grad)):
            if key in grads:
                arr += grads[key]
        g_sdf, _ = ev.backward(g_val, g_grad, g_feat)
        state.sdf_net.params, state.adam["sdf"] = adam_step(state.sdf_net.params, g_sdf, state.adam["sdf"],
                                                            sdf_lr(config, it))

    values = {name: term.value for name, term in parts.items()}
    values["total"] = total
    return values


# ---------------------------------------------------------------- loop and checkpoints

def _after_step(state: TrainState, config: TrainConfig) -> TrainState:
    k = state.iteration
    if config.densify_from_iter < k <= config.densify_until_iter and k % config.densify_interval == 0:
        if config.prune_hidden_threshold > 0:
            state = prune_hidden(state, config)
        state = densify_and_prune(state, config)
    if config.opacity_reset_interval and k % config.opacity_reset_interval == 0 and k < config.densify_until_iter:
        reset_opacity(state, config.opacity_reset_value)
    return state


def train(scene, config: TrainConfig, out_dir=None, state: TrainState | None = None,
          progress_every: int = 0, until: int | None = None) -> tuple[TrainState, list]:
    """Run to config.total_iters (or stop early at `until`, keeping the full schedule).

    Writes checkpoints and the loss CSV when out_dir is given.
    """
    state = TrainState.initial(config) if state is None else state
    out_dir = Path(out_dir) if out_dir is not None else None
    rows = []
    writer = fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "train_log.csv", "a" if state.iteration else "w", newline="")
        writer = csv.writer(fh)
        if not state.iteration:
            writer.writerow(LOG_COLUMNS)
    try:
        stop = config.total_iters if until is None else min(until, config.total_iters)
        while state.iteration < stop:
            it = state.iteration
            values = train_step(state, scene.cameras, scene.images, config, getattr(scene, "masks", None))
            row = log_row(it, values, len(state.gaussians), float(state.gaussians.opacities.mean()), values["total"])
            rows.append(row)
            if writer is not None:
                writer.writerow(row)
            state.iteration += 1
            state = _after_step(state, config)
            if progress_every and state.iteration % progress_every == 0:
                log.info("iter %d total %.5f rgb %.5f n=%d", state.iteration, values["total"], values["rgb"],
                         len(state.gaussians))
            if out_dir is not None and config.checkpoint_interval and state.iteration % config.checkpoint_interval == 0:
                save_state(state, config, out_dir / f"ckpt_{state.iteration:06d}.gsrf")
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        save_state(state, config, out_dir / "final.gsrf")
    return state, rows


def save_state(state: TrainState, config: TrainConfig, path) -> None:
    extra = {"grad_accum": state.grad_accum, "grad_count": state.grad_count, "peak_weight": state.peak_weight}
    adam_t = {}
    for name, st in state.adam.items():
        extra[f"adam.{name}.m"] = st.m
        extra[f"adam.{name}.v"] = st.v
        adam_t[name] = st.t
    meta = {"config": json_config(config), "adam_t": adam_t, "rng": state.rng.bit_generator.state}
    app = state.app_net.params if state.app_net is not None else np.zeros(0)
    save_checkpoint(path, state.gaussians, state.sdf_net.params, app, state.iteration, meta, extra)


def json_config(config: TrainConfig) -> dict:
    import json

    return json.loads(config.to_json())


def load_state(path) -> tuple[TrainState, TrainConfig]:
    ck = load_checkpoint(path)
    config = TrainConfig.from_dict(ck.metadata["config"])
    sdf, app = _empty_networks(config)
    sdf.params = ck.sdf_params.astype(np.float64)
    if app is not None:
        app.params = ck.app_params.astype(np.float64)
    adam = {name: AdamState(ck.extra[f"adam.{name}.m"], ck.extra[f"adam.{name}.v"], int(t))
            for name, t in ck.metadata["adam_t"].items()}
    rng = np.random.default_rng()
    rng.bit_generator.state = ck.metadata["rng"]
    state = TrainState(ck.iteration, ck.gaussians, sdf, app, adam, ck.extra["grad_accum"],
                       ck.extra["grad_count"].astype(np.int64), rng, ck.extra.get("peak_weight"))
    return state, config


def _empty_networks(config: TrainConfig):
    dtype = np.float32 if config.network_dtype == "float32" else np.float64
    w = config.hidden_width
    sdf = make_sdf_network(w, config.sdf_layers, w, config.pos_bands, config.skip_layer)
    sdf.dtype = dtype
    app = None
    if config.use_appearance_net:
        app = make_appearance_network(w, config.appearance_layers, w, config.pos_bands, config.dir_bands)
        app.dtype = dtype
    return sdf, app


def mean_opacity(state: TrainState) -> float:
    return float(logistic(state.gaussians.opacity_logits).mean())


def gaussian_colors(state: TrainState, camera, config: TrainConfig) -> np.ndarray:
    """Per-Gaussian colors for a view, as the training step computes them."""
    g = state.gaussians
    if state.app_net is None:
        return g.appearance_seeds.copy()
    P = g.centroids
    view = _unit(P - camera.center)[0]
    if state.iteration >= config.sdf_warmup_iters:
        ev = SdfEvaluation(state.sdf_net, P, config.fd_step)
        normal, feature = _unit(ev.gradient)[0], ev.feature
    else:
        normal = np.zeros((len(g), 3))
        feature = np.zeros((len(g), state.app_net.encoding.block_dims[3]))
    return AppearanceEvaluation(state.app_net, P, view, normal, feature).color
