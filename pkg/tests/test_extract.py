import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsurf.core.types import Camera, TriangleMesh
from gsurf.extract import (SampledSurface, chamfer_distance, evaluate, marching_cubes, normal_consistency,
                           sample_mesh, sdf_normal_map)
from gsurf.pipeline.scene import icosphere


def sphere(x):
    return np.linalg.norm(x, axis=1) - 0.5


def _brute(a, b):
    d = np.linalg.norm(a.points[:, None] - b.points[None], axis=-1)
    ia, ib = d.argmin(1), d.argmin(0)
    cd = 0.5 * (d.min(1).mean() + d.min(0).mean())
    nc = 0.5 * (np.abs(np.sum(a.normals * b.normals[ia], 1)).mean() + np.abs(np.sum(b.normals * a.normals[ib], 1)).mean())
    return cd, nc


def _cloud(n, seed):
    rng = np.random.default_rng(seed)
    nrm = rng.normal(size=(n, 3))
    return SampledSurface(rng.random((n, 3)), nrm / np.linalg.norm(nrm, axis=1, keepdims=True))


# ------------------------------------------------------------------ marching cubes

def test_mc_sphere():
    m = marching_cubes(sphere, 64)
    assert m.is_watertight()
    assert np.abs(np.linalg.norm(m.vertices, axis=1) - 0.5).max() < 2 * (2 / 64)
    np.testing.assert_allclose(m.vertex_normals, m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True),
                               atol=1e-6)
    # outward winding: face normals agree with the position
    fn = np.cross(m.vertices[m.triangles[:, 1]] - m.vertices[m.triangles[:, 0]],
                  m.vertices[m.triangles[:, 2]] - m.vertices[m.triangles[:, 0]])
    assert np.all(np.sum(fn * m.vertices[m.triangles].mean(1), axis=1) > 0)


def test_mc_plane_exact():
    # offset so the level set cuts grid edges instead of passing through grid nodes
    m = marching_cubes(lambda x: x[:, 0] - 0.013, 16)
    assert len(m.triangles) > 0
    assert np.abs(m.vertices[:, 0] - 0.013).max() < 1e-6


def test_mc_constant_is_empty():
    m = marching_cubes(lambda x: np.ones(len(x)), 16)
    assert len(m.vertices) == 0 and len(m.triangles) == 0


def test_mc_min_resolution():
    with pytest.raises(ValueError):
        marching_cubes(sphere, 4)


def test_mc_positive_scaling_invariant():
    a = marching_cubes(sphere, 32)
    b = marching_cubes(lambda x: 2 * sphere(x), 32)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    np.testing.assert_allclose(a.vertices, b.vertices, atol=1e-12)


def test_mc_no_degenerate_triangles():
    m = marching_cubes(lambda x: np.abs(x[:, 0]) + np.abs(x[:, 1]) - 0.5, 24)
    f = m.triangles
    assert np.all(m.face_areas > 0)
    assert np.all((f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2]))


# ------------------------------------------------------------------ normal maps

def _cam(size=32):
    return Camera.look_at((0.3, 0.2, 2.5), width=size, height=size, fx=size * 1.4)


def _sphere_depth(cam, r=0.5):
    d = cam.pixel_directions()
    C = cam.center
    a, b, c = np.sum(d * d, -1), d @ C, C @ C - r * r
    disc = b * b - a * c
    t = (-b - np.sqrt(np.maximum(disc, 0))) / a
    return np.where(disc > 0, t, 0.0), (disc > 0).astype(float)


def test_normal_map_sphere():
    cam = _cam()
    depth, alpha = _sphere_depth(cam)
    n = sdf_normal_map(sphere, cam, depth, alpha)
    X = cam.center + depth[..., None] * cam.pixel_directions()
    mask = alpha > 0.5
    truth = X[mask] / np.linalg.norm(X[mask], axis=1, keepdims=True)
    assert np.abs(n[mask] - truth).max() < 1e-2
    assert not n[~mask].any()


def test_normal_map_empty_alpha():
    cam = _cam(8)
    assert not sdf_normal_map(sphere, cam, np.ones((8, 8)), np.zeros((8, 8))).any()


def test_normal_map_plane():
    cam = Camera.look_at((0, 0, 3.0), up=(0, 1, 0), width=8, height=8, fx=10)
    n = sdf_normal_map(lambda x: x[:, 2] - 0.2, cam, np.full((8, 8), 2.8), np.ones((8, 8)))
    np.testing.assert_allclose(n.reshape(-1, 3), np.tile([0, 0, 1.0], (64, 1)), atol=1e-8)


# ------------------------------------------------------------------ sampling

def test_sample_single_triangle():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    s = sample_mesh(TriangleMesh(v, [[0, 1, 2]]), 1000, seed=0)
    p = s.points
    assert np.all(p[:, 0] >= -1e-12) and np.all(p[:, 1] >= -1e-12) and np.all(p.sum(1) <= 1 + 1e-12)
    assert np.all(p[:, 2] == 0)
    np.testing.assert_allclose(np.abs(s.normals[:, 2]), 1.0)


def test_sample_area_ratio():
    v = np.array([[0, 0, 0], [3, 0, 0], [0, 1, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]], float)
    s = sample_mesh(TriangleMesh(v, [[0, 1, 2], [3, 4, 5]]), 10000, seed=3)
    big = (s.points[:, 0] < 5).sum()
    assert 2.6 <= big / (10000 - big) <= 3.4


def test_sample_sphere_radius_and_determinism():
    m = icosphere(1.0, 4)
    s = sample_mesh(m, 20000, seed=1)
    assert abs(np.linalg.norm(s.points, axis=1).mean() - 1.0) < 0.01
    np.testing.assert_allclose(np.linalg.norm(s.normals, axis=1), 1.0, atol=1e-5)
    assert sample_mesh(m, 500, seed=2).points.tobytes() == sample_mesh(m, 500, seed=2).points.tobytes()


# ------------------------------------------------------------------ metrics

def test_cd_closed_forms():
    a = SampledSurface([[0, 0, 0]], [[0, 0, 1]])
    b = SampledSurface([[0, 0, 0.1]], [[0, 0, 1]])
    assert chamfer_distance(a, a) == 0
    assert chamfer_distance(a, b) == pytest.approx(0.1)
    assert evaluate(a, b)["cd_x1000"] == pytest.approx(100.0)


def test_nc_identity_and_flip():
    a = _cloud(200, 0)
    flipped = SampledSurface(a.points, -a.normals)
    assert normal_consistency(a, a) == pytest.approx(1.0)
    assert normal_consistency(a, flipped) == pytest.approx(1.0)


def test_nc_noisy_sphere():
    m = icosphere(0.5, 4)
    a = sample_mesh(m, 5000, seed=0)
    rng = np.random.default_rng(1)
    b = SampledSurface(a.points + rng.normal(0, 0.01, a.points.shape), a.normals)
    assert normal_consistency(a, b) > 0.95


@pytest.mark.parametrize("seed", range(3))
def test_metrics_match_brute_force(seed):
    a, b = _cloud(500, 2 * seed), _cloud(500, 2 * seed + 1)
    cd, nc = _brute(a, b)
    assert abs(chamfer_distance(a, b) - cd) < 1e-9
    assert abs(normal_consistency(a, b) - nc) < 1e-9


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 60), st.integers(1, 60), st.floats(0.01, 100.0))
def test_metric_invariants(seed, na, nb, scale):
    rng = np.random.default_rng(seed)
    a, b = _cloud(na, int(rng.integers(1 << 30))), _cloud(nb, int(rng.integers(1 << 30)))
    assert chamfer_distance(a, b) == chamfer_distance(b, a)
    assert chamfer_distance(a.scaled(scale), b.scaled(scale)) == pytest.approx(scale * chamfer_distance(a, b),
                                                                              rel=1e-9)
    assert normal_consistency(a.scaled(scale), b.scaled(scale)) == pytest.approx(normal_consistency(a, b), abs=1e-12)
    flip = np.where(rng.random(na) < 0.5, -1.0, 1.0)[:, None]
    assert normal_consistency(SampledSurface(a.points, a.normals * flip), b) == pytest.approx(
        normal_consistency(a, b), abs=1e-12)


def test_evaluate_json_shape():
    a, b = _cloud(10, 0), _cloud(12, 1)
    r = evaluate(a, b, seed=5)
    assert set(r) == {"cd_x1000", "nc", "counts", "seed"}
    assert r["counts"] == [10, 12] and r["seed"] == 5
