import json

import numpy as np
import pytest

from gsurf.core.config import TrainConfig
from gsurf.core.io import export_mesh_ply, load_checkpoint
from gsurf.core.types import GaussianSet, logit
from gsurf.pipeline import SyntheticScene, generate_scene
from gsurf.pipeline.cli import main
from gsurf.pipeline.scene import fibonacci_cameras, shape_mesh
from gsurf.pipeline.train import (TrainingDiverged, TrainState, densify_and_prune, init_gaussians, load_state,
                                  prune_hidden, save_state, sdf_lr, train, train_step)

TINY = dict(n_gaussians=150, total_iters=8, sdf_warmup_iters=4, hidden_width=16, sdf_surface_samples=64,
            sdf_uniform_samples=32, sdf_near_samples=32, normal_map_pixels=32, densify_from_iter=2,
            densify_interval=3, mc_resolution=32, dep_from_iter=2, dnc_from_iter=2, ent_from_iter=2)


@pytest.fixture(scope="module")
def small_scene():
    return generate_scene("sphere", 4, 24, seed=0)


# ------------------------------------------------------------------ scenes

@pytest.fixture(scope="module")
def sphere16():
    return generate_scene("sphere", 16, 64)


def test_sphere_scene_coverage(sphere16):
    assert len(sphere16.images) == 16
    for img, mask in zip(sphere16.images, sphere16.masks):
        assert img.shape == (64, 64, 3)
        assert mask.mean() >= 0.2


def test_scene_deterministic(sphere16):
    again = generate_scene("sphere", 16, 64)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(sphere16.images, again.images))


def test_torus_genus_one():
    m = shape_mesh("torus")
    assert m.is_watertight() and m.euler_characteristic() == 0


@pytest.mark.parametrize("shape", ["sphere", "torus", "box-union"])
def test_shapes_inside_bounds(shape):
    m = shape_mesh(shape)
    assert np.abs(m.vertices).max() <= 0.8


def test_cameras_face_origin():
    for cam in fibonacci_cameras(10, 32):
        assert np.linalg.norm(cam.center) == pytest.approx(2.5)
        np.testing.assert_allclose(cam.R[2], -cam.center / 2.5, atol=1e-12)


def test_scene_round_trip(tmp_path, small_scene):
    small_scene.save(tmp_path / "s")
    for name in ("cameras.json", "images/view_000.png", "masks/view_000.png", "gt_mesh.ply"):
        assert (tmp_path / "s" / name).is_file()
    back = SyntheticScene.load(tmp_path / "s")
    assert len(back.cameras) == 4
    np.testing.assert_allclose(back.images[0], small_scene.images[0], atol=0.5 / 255 + 1e-9)
    with pytest.raises(FileNotFoundError):
        SyntheticScene.load(tmp_path / "missing")


# ------------------------------------------------------------------ initialization

def test_init_gaussians():
    g = init_gaussians(1000, seed=0)
    assert len(g) == 1000
    assert np.all(np.abs(g.centroids) <= 0.8)
    assert np.all(g.opacities == 0.5)
    np.testing.assert_allclose(np.linalg.norm(g.quaternions, axis=1), 1.0)
    for i in range(0, 1000, 97):
        p = g[i]
        assert abs(p.tangent_u @ p.tangent_v) < 1e-9
    assert not np.array_equal(g.centroids, init_gaussians(1000, seed=1).centroids)


# ------------------------------------------------------------------ densification

def _state(n=6, **cfg):
    config = TrainConfig(n_gaussians=n, hidden_width=16, **cfg)
    return TrainState.initial(config), config


def test_densify_noop_resets_accumulators():
    st, cfg = _state()
    st.grad_accum[:] = 1e-6
    st.grad_count[:] = 1
    before = st.gaussians.copy()
    out = densify_and_prune(st, cfg)
    for f in GaussianSet.PARAM_FIELDS:
        assert np.array_equal(getattr(out.gaussians, f), getattr(before, f))
    assert not out.grad_accum.any() and not out.grad_count.any()


def test_prune_transparent():
    st, cfg = _state()
    st.gaussians.opacity_logits[2] = logit(0.001)
    out = densify_and_prune(st, cfg)
    assert len(out.gaussians) == 5
    assert all(len(s.m) == 5 for k, s in out.adam.items() if k in GaussianSet.PARAM_FIELDS)


def test_prune_hidden():
    st, cfg = _state()
    st.peak_weight[:] = 0.5
    st.peak_weight[[1, 4]] = 0.001
    st.adam["opacity_logits"].v[:] = np.arange(6)
    out = prune_hidden(st, cfg)
    assert len(out.gaussians) == 4
    np.testing.assert_array_equal(out.adam["opacity_logits"].v, [0, 2, 3, 5])
    assert prune_hidden(out, cfg) is out
    st.peak_weight[:] = 0.0
    with pytest.raises(TrainingDiverged):
        prune_hidden(st, cfg)


def test_sdf_lr_schedule():
    cfg = TrainConfig(total_iters=1000)
    assert sdf_lr(cfg, 0) == pytest.approx(cfg.lr_sdf)
    assert sdf_lr(cfg, 1000) == pytest.approx(cfg.lr_sdf_final)
    assert sdf_lr(cfg, 500) == pytest.approx(np.sqrt(cfg.lr_sdf * cfg.lr_sdf_final))


def test_split_large_hot_gaussian():
    st, cfg = _state()
    st.gaussians.log_scales[3] += 1.0  # the one large disk
    st.grad_accum[3], st.grad_count[3] = 1.0, 1
    st.adam["centroids"].m[3] = 7.0
    parent = st.gaussians[3]
    out = densify_and_prune(st, cfg)
    assert len(out.gaussians) == 7
    kids = out.gaussians.select([5, 6])
    np.testing.assert_allclose(np.exp(kids.log_scales), np.tile(np.exp(parent.log_scales) / 1.6, (2, 1)))
    assert np.all(out.adam["centroids"].m[5:] == 7.0)


def test_clone_small_hot_gaussian():
    st, cfg = _state()
    st.gaussians.log_scales[1] -= 1.0
    st.grad_accum[1], st.grad_count[1] = 1.0, 1
    out = densify_and_prune(st, cfg)
    assert len(out.gaussians) == 7
    np.testing.assert_array_equal(out.gaussians.centroids[-1], st.gaussians.centroids[1])


def test_prune_everything_raises():
    st, cfg = _state()
    st.gaussians.opacity_logits[:] = -20
    with pytest.raises(TrainingDiverged, match="all Gaussians pruned"):
        densify_and_prune(st, cfg)


# ------------------------------------------------------------------ training

def test_warmup_freezes_sdf(small_scene):
    cfg = TrainConfig(**{**TINY, "total_iters": 6, "sdf_warmup_iters": 5})
    st = TrainState.initial(cfg)
    p0 = st.sdf_net.params.copy()
    for _ in range(5):
        train_step(st, small_scene.cameras, small_scene.images, cfg)
        st.iteration += 1
    assert st.sdf_net.params.tobytes() == p0.tobytes()
    train_step(st, small_scene.cameras, small_scene.images, cfg)
    assert st.sdf_net.params.tobytes() != p0.tobytes()


def test_sdf_only_moves_through_its_paths(small_scene):
    """With the SDF terms switched off, the SDF changes only through the appearance inputs."""
    base = {**TINY, "sdf_warmup_iters": 1, "lambda_pos": 0.0, "lambda_eik": 0.0, "lambda_off": 0.0,
            "lambda_ori": 0.0, "lambda_nor": 0.0}
    for gam, moved in ((False, False), (True, True)):
        cfg = TrainConfig(**base, use_appearance_net=gam)
        st = TrainState.initial(cfg)
        st.iteration = 1
        p0 = st.sdf_net.params.copy()
        train_step(st, small_scene.cameras, small_scene.images, cfg)
        assert (st.sdf_net.params.tobytes() != p0.tobytes()) == moved


def test_appearance_params_only_from_rgb(small_scene):
    """Appearance gradients come from the image losses alone: rescaling SDF weights leaves them unchanged."""
    a = TrainConfig(**{**TINY, "sdf_warmup_iters": 1})
    b = a.replace(lambda_pos=1.0, lambda_eik=1.0, lambda_off=1.0, lambda_ori=1.0, lambda_nor=0.0)
    a = a.replace(lambda_nor=0.0)
    out = []
    for cfg in (a, b):
        st = TrainState.initial(cfg)
        st.iteration = 1
        train_step(st, small_scene.cameras, small_scene.images, cfg)
        out.append(st.app_net.params.copy())
    assert out[0].tobytes() == out[1].tobytes()


def test_log_and_checkpoints(tmp_path, small_scene):
    cfg = TrainConfig(**TINY, checkpoint_interval=4)
    st, rows = train(small_scene, cfg, tmp_path)
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0].split(",") == ["iter", "l_rgb", "l_dep", "l_dnc", "l_pos", "l_eik", "l_off", "l_ori", "l_nor",
                                   "l_ent", "total", "n_gaussians", "mean_opacity"]
    assert len(lines) == 9 and len(rows) == 8
    assert (tmp_path / "ckpt_000004.gsrf").is_file() and (tmp_path / "final.gsrf").is_file()
    back, cfg2 = load_state(tmp_path / "final.gsrf")
    assert cfg2 == cfg and back.iteration == 8
    assert back.sdf_net.params.tobytes() == st.sdf_net.params.tobytes()


def test_resume_matches_uninterrupted(tmp_path, small_scene):
    cfg = TrainConfig(**TINY)
    full, _ = train(small_scene, cfg)
    half, _ = train(small_scene, cfg, until=5)
    save_state(half, cfg, tmp_path / "half.gsrf")
    resumed, _ = load_state(tmp_path / "half.gsrf")
    resumed.sdf_net.dtype = full.sdf_net.dtype
    if resumed.app_net is not None:
        resumed.app_net.dtype = full.app_net.dtype
    done, _ = train(small_scene, cfg, state=resumed)
    for f in GaussianSet.PARAM_FIELDS:
        assert getattr(done.gaussians, f).tobytes() == getattr(full.gaussians, f).tobytes()
    assert done.sdf_net.params.tobytes() == full.sdf_net.params.tobytes()


def test_deterministic(tmp_path, small_scene):
    cfg = TrainConfig(**TINY)
    train(small_scene, cfg, tmp_path / "a")
    train(small_scene, cfg, tmp_path / "b")
    assert (tmp_path / "a" / "final.gsrf").read_bytes() == (tmp_path / "b" / "final.gsrf").read_bytes()


def test_non_finite_aborts(small_scene):
    cfg = TrainConfig(**TINY)
    st = TrainState.initial(cfg)
    st.gaussians.centroids[0] = np.nan
    with pytest.raises(TrainingDiverged, match="iteration 0"):
        train_step(st, small_scene.cameras, small_scene.images, cfg)


# ------------------------------------------------------------------ CLI

def test_cli_usage_errors(tmp_path, capsys):
    assert main(["train", str(tmp_path / "nowhere")]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["synth", "--shape", "cube"]) == 1
    assert main(["train", str(tmp_path), "--config", str(tmp_path / "nope.json")]) == 1


def test_cli_runtime_error(tmp_path):
    bad = tmp_path / "bad.gsrf"
    bad.write_bytes(b"GSRF\x01")
    assert main(["extract", str(bad), "--out", str(tmp_path / "m.ply")]) == 2


def test_cli_eval_identical(tmp_path, capsys):
    export_mesh_ply(shape_mesh("sphere"), tmp_path / "s.ply")
    assert main(["eval", str(tmp_path / "s.ply"), str(tmp_path / "s.ply"), "--samples", "2000"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["cd_x1000"] == 0 and res["nc"] == pytest.approx(1.0)


def test_cli_pipeline(tmp_path, capsys):
    scene, run = tmp_path / "scene", tmp_path / "run"
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    assert main(["synth", "--shape", "sphere", "--views", "4", "--res", "24", "--out", str(scene)]) == 0
    assert main(["train", str(scene), "--config", str(tmp_path / "cfg.json"), "--out", str(run)]) == 0
    assert main(["render", str(run / "final.gsrf"), "--scene", str(scene), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "color.png").is_file() and (tmp_path / "r" / "median_depth.pfm").is_file()
    assert main(["extract", str(run / "final.gsrf"), "--out", str(tmp_path / "mesh.ply")]) == 0
    assert main(["eval", str(tmp_path / "mesh.ply"), str(scene / "gt_mesh.ply"), "--samples", "2000"]) == 0
    res = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert res["cd_x1000"] >= 0 and 0 <= res["nc"] <= 1
