"""Command-line entry point: synth, train, render, extract, eval, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..core.config import TrainConfig

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _common(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default, help="random seed (overrides the config)")
    p.add_argument("--config", default=default, help="JSON file with TrainConfig fields")
    p.add_argument("--out", default=default, help="output directory or file")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gsurf", parents=[_common(False)], description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    common = [_common(True)]

    p = sub.add_parser("synth", parents=common, help="generate a synthetic scene directory")
    p.add_argument("--shape", default="sphere", choices=["sphere", "torus", "box-union"])
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--res", type=int, default=64)

    p = sub.add_parser("train", parents=common, help="train on a scene directory")
    p.add_argument("scene", help="scene directory written by synth")
    p.add_argument("--iters", type=int, help="override total_iters")
    p.add_argument("--no-appearance-net", action="store_true", help="per-Gaussian static colors")

    p = sub.add_parser("render", parents=common, help="render maps from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--scene", help="scene directory whose cameras.json is used")
    p.add_argument("--view", type=int, default=0, help="camera index in the scene")
    p.add_argument("--camera", help="JSON file holding one camera")

    p = sub.add_parser("extract", parents=common, help="marching-cubes mesh from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--resolution", type=int, help="grid samples per axis (default: config mc_resolution)")
    p.add_argument("--keep-all", action="store_true", help="keep every connected component")

    p = sub.add_parser("eval", parents=common, help="Chamfer distance and normal consistency as JSON")
    p.add_argument("a", help="mesh PLY")
    p.add_argument("b", help="mesh or point-cloud PLY")
    p.add_argument("--samples", type=int, default=100_000)

    p = sub.add_parser("ablate", parents=common, help="full model vs w/o opacity regularization vs w/o appearance net")
    p.add_argument("scene")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--iters", type=int)
    p.add_argument("--variants", default="full,no_or,no_gam")
    return parser


def _config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = TrainConfig.load(path)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"bad config {path}: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "iters", None):
        cfg = cfg.replace(total_iters=args.iters)
    return cfg


def _need_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _need_scene(path):
    if not (Path(path) / "cameras.json").is_file():
        raise UsageError(f"scene directory not found or incomplete: {path}")


def cmd_synth(args) -> int:
    from .scene import generate_scene

    out = Path(args.out or f"scene_{args.shape}")
    scene = generate_scene(args.shape, args.views, args.res, args.seed or 0)
    scene.save(out)
    print(json.dumps({"scene": str(out), "views": args.views, "resolution": args.res}))
    return 0


def cmd_train(args) -> int:
    from .scene import SyntheticScene
    from .train import train

    _need_scene(args.scene)
    cfg = _config(args)
    if args.no_appearance_net:
        cfg = cfg.replace(use_appearance_net=False)
    out = Path(args.out or "run")
    scene = SyntheticScene.load(args.scene)
    state, _ = train(scene, cfg, out, progress_every=500)
    print(json.dumps({"checkpoint": str(out / "final.gsrf"), "iterations": state.iteration,
                      "n_gaussians": len(state.gaussians)}))
    return 0


def cmd_render(args) -> int:
    from ..core.io import load_cameras, write_pfm, write_png
    from ..core.types import Camera
    from ..splat import render
    from .train import gaussian_colors, load_state

    _need_file(args.checkpoint, "checkpoint")
    if args.camera:
        _need_file(args.camera, "camera file")
        cam = Camera.from_json(json.loads(Path(args.camera).read_text()))
    elif args.scene:
        _need_scene(args.scene)
        cams = load_cameras(Path(args.scene) / "cameras.json")
        if not 0 <= args.view < len(cams):
            raise UsageError(f"view {args.view} out of range (scene has {len(cams)})")
        cam = cams[args.view]
    else:
        raise UsageError("render needs --scene or --camera")
    state, cfg = load_state(args.checkpoint)
    out = render(cam, state.gaussians, gaussian_colors(state, cam, cfg))
    d = Path(args.out or "render")
    d.mkdir(parents=True, exist_ok=True)
    write_png(d / "color.png", out.color)
    write_png(d / "normal.png", 0.5 * (out.normal_map + 1.0) * out.alpha[..., None])
    write_png(d / "alpha.png", np.repeat(out.alpha[..., None], 3, -1))
    write_pfm(d / "expected_depth.pfm", out.expected_depth)
    write_pfm(d / "median_depth.pfm", out.median_depth)
    print(json.dumps({"out": str(d)}))
    return 0


def cmd_extract(args) -> int:
    from ..core.io import export_mesh_ply
    from ..extract import marching_cubes
    from .train import load_state

    _need_file(args.checkpoint, "checkpoint")
    state, cfg = load_state(args.checkpoint)
    state.sdf_net.dtype = np.float64
    res = args.resolution or cfg.mc_resolution
    mesh = marching_cubes(state.sdf_net, res)
    if not args.keep_all:
        mesh = mesh.largest_component()
    out = Path(args.out or "mesh.ply")
    out.parent.mkdir(parents=True, exist_ok=True)
    export_mesh_ply(mesh, out, binary=True)
    print(json.dumps({"mesh": str(out), "vertices": len(mesh.vertices), "triangles": len(mesh.triangles),
                      "euler_characteristic": mesh.euler_characteristic() if len(mesh.triangles) else None}))
    return 0


def _surface(path, samples, seed):
    """Area samples of a mesh PLY, or the points themselves for a face-less PLY."""
    from ..core.io import import_mesh_ply
    from ..extract import SampledSurface, sample_mesh

    mesh = import_mesh_ply(path)
    if len(mesh.triangles):
        return sample_mesh(mesh, samples, seed)
    if mesh.vertex_normals is None:
        raise UsageError(f"point cloud {path} has no normals")
    return SampledSurface(mesh.vertices, mesh.vertex_normals, "points")


def cmd_eval(args) -> int:
    from ..extract import evaluate

    _need_file(args.a, "mesh")
    _need_file(args.b, "mesh")
    seed = args.seed or 0
    a = _surface(args.a, args.samples, seed)
    b = _surface(args.b, args.samples, seed)
    result = evaluate(a, b, seed)
    text = json.dumps(result)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    from .ablation import run_ablation

    _need_scene(args.scene)
    cfg = _config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [(args.seed or 0) + k for k in range(args.seeds)]
    table = run_ablation(args.scene, cfg, variants, seeds, out_dir=args.out)
    print(json.dumps(table, indent=2))
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "render": cmd_render, "extract": cmd_extract,
            "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help and usage errors
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gsurf {args.command}: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"gsurf {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
