"""Variant runs: full model, without opacity regularization, without the appearance network."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core.config import TrainConfig
from ..extract import evaluate, marching_cubes, sample_mesh
from .scene import SyntheticScene
from .train import TrainState, train

VARIANTS = {
    "full": {},
    "no_or": {"lambda_ent": 0.0},
    "no_gam": {"use_appearance_net": False},
}


def run_summary(state: TrainState, config: TrainConfig, gt_mesh, samples: int = 100_000) -> dict:
    """Opacity statistics of the final Gaussians and mesh metrics against the ground truth."""
    o = state.gaussians.opacities
    record = {
        "n_gaussians": len(o),
        "frac_opacity_below_half": float(np.mean(o < 0.5)),
        "mean_opacity": float(o.mean()),
    }
    sdf = state.sdf_net.copy()
    sdf.dtype = np.float64
    mesh = marching_cubes(sdf, config.mc_resolution)
    if len(mesh.triangles) == 0:
        record.update(cd_x1000=None, nc=None, euler_characteristic=None)
        return record
    mesh = mesh.largest_component()
    record["euler_characteristic"] = mesh.euler_characteristic()
    if gt_mesh is not None:
        m = evaluate(sample_mesh(mesh, samples, config.seed), sample_mesh(gt_mesh, samples, config.seed))
        record.update(cd_x1000=m["cd_x1000"], nc=m["nc"])
    return record


def run_ablation(scene, config: TrainConfig, variants=("full", "no_or", "no_gam"), seeds=(0, 1, 2),
                 out_dir=None) -> dict:
    if not isinstance(scene, SyntheticScene):
        scene = SyntheticScene.load(scene)
    runs = []
    for variant in variants:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        for seed in seeds:
            cfg = config.replace(seed=seed, **VARIANTS[variant])
            run_dir = Path(out_dir) / f"{variant}_seed{seed}" if out_dir else None
            state, _ = train(scene, cfg, run_dir)
            rec = {"variant": variant, "seed": seed}
            rec.update(run_summary(state, cfg, scene.mesh))
            runs.append(rec)
    summary = {}
    for variant in variants:
        rs = [r for r in runs if r["variant"] == variant]
        summary[variant] = {k: float(np.mean([r[k] for r in rs])) for k in
                            ("n_gaussians", "frac_opacity_below_half", "mean_opacity", "cd_x1000", "nc")
                            if all(r.get(k) is not None for r in rs)}
    table = {"runs": runs, "summary": summary}
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.json").write_text(json.dumps(table, indent=2))
    return table
