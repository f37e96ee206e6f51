import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from conftest import random_scene
from _audit import audit_render
from gsurf.core.types import Camera, GaussianPrimitive, GaussianSet, quaternion_to_matrix
from gsurf.splat import (RenderUpstream, depth_distortion_loss, depth_normal_consistency_loss, ray_disk_intersect,
                         rasterize, reference_render, render, render_backward, rgb_loss, ssim_map)
from gsurf.splat import kernels

ONE = 40.0  # logistic(40) == 1.0 in float64


def pinhole(eye=(0, 0, 3.0), size=1, f=2.0):
    return Camera.look_at(eye, width=size, height=size, fx=f, cx=size / 2, cy=size / 2)


def disk(centroid=(0, 0, 0), q=(1, 0, 0, 0), scales=(0.5, 0.5), logit_o=ONE):
    return GaussianPrimitive(np.array(centroid, float), np.array(q, float), np.log(scales), logit_o, np.zeros(3))


def gset(*prims):
    return GaussianSet(np.array([p.centroid for p in prims]), np.array([p.quaternion for p in prims]),
                       np.array([p.log_scales for p in prims]), np.array([p.opacity_logit for p in prims]),
                       np.zeros((len(prims), 3)))


# ------------------------------------------------------------------ intersection

def test_intersect_center():
    uv, z = ray_disk_intersect(pinhole(), (0, 0), disk())
    assert uv == pytest.approx((0.0, 0.0), abs=1e-12)
    assert z == pytest.approx(3.0)


def test_intersect_translated_in_plane():
    p = disk(scales=(0.5, 0.5))
    p = disk(centroid=p.scale_u * p.tangent_u)
    uv, _ = ray_disk_intersect(pinhole(), (0, 0), p)
    assert uv == pytest.approx((-1.0, 0.0), abs=1e-12)


def test_intersect_edge_on_and_behind():
    edge_on = disk(q=(np.cos(np.pi / 4), np.sin(np.pi / 4), 0, 0))
    assert abs(edge_on.normal[2]) < 1e-12
    assert ray_disk_intersect(pinhole(), (0, 0), edge_on) is None
    assert ray_disk_intersect(pinhole(), (0, 0), disk(centroid=(0, 0, 4))) is None
    assert ray_disk_intersect(pinhole(), (0, 0), disk(centroid=(0, 1.6, 0))) is None  # 3.2 sigma away


# ------------------------------------------------------------------ forward

def test_single_opaque_fragment():
    out = render(pinhole(), gset(disk()), np.array([[1.0, 0, 0]]))
    np.testing.assert_array_equal(out.color[0, 0], [1, 0, 0])
    assert out.alpha[0, 0] == 1.0


def test_two_fragment_weights():
    g = gset(disk(logit_o=0.0), disk(centroid=(0, 0, -1)))
    c = np.array([[1.0, 0, 0], [0, 0, 1.0]])
    out = render(pinhole(), g, c)
    assert [w for _, w, _, _ in out.fragments.pixel(0)] == [0.5, 0.5]
    np.testing.assert_allclose(out.color[0, 0], [0.5, 0, 0.5])
    assert out.median_depth[0, 0] == pytest.approx(4.0)
    assert out.expected_depth[0, 0] == pytest.approx(3.5)


def test_fragment_invariants(scene5):
    cam, g, colors = scene5
    f = rasterize(cam, g).fragments
    o = g.opacities[f.gaussian_index]
    np.testing.assert_allclose(f.kernel, np.exp(-(f.u ** 2 + f.v ** 2) / 2), rtol=1e-15, atol=0)
    assert np.all(f.weight >= 0) and np.all(f.weight <= o * f.kernel)


@pytest.mark.parametrize("seed", range(10))
def test_matches_reference(seed):
    cam, g, colors = random_scene(seed)
    out = render(cam, g, colors, min_transmittance=0.0)
    ref = reference_render(cam, g, colors)
    for key, val in ref.items():
        np.testing.assert_allclose(getattr(out, key), val, atol=1e-12, rtol=0, err_msg=key)


def test_peak_weight_is_per_gaussian_max(scene5):
    cam, g, colors = scene5
    out = render(cam, g, colors)
    f = out.fragments
    expected = np.zeros(len(g))
    for k, w in zip(f.gaussian_index, f.weight):
        expected[k] = max(expected[k], w)
    np.testing.assert_array_equal(out.peak_weight(), expected)
    assert np.all(out.peak_weight() <= g.opacities)


@pytest.mark.parametrize("tile", [1, 3, 8, 16])
def test_tiling_is_exact(tile):
    cam, g, colors = random_scene(3, n=12, size=16)
    a = render(cam, g, colors, tile=tile)
    b = render(cam, g, colors, tile=5)
    assert a.color.tobytes() == b.color.tobytes()
    assert a.median_depth.tobytes() == b.median_depth.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
def test_permutation_invariance(seed, rnd):
    cam, g, colors = random_scene(seed)
    perm = list(range(len(g)))
    rnd.shuffle(perm)
    a = render(cam, g, colors)
    b = render(cam, g.select(perm), colors[perm])
    np.testing.assert_allclose(a.color, b.color, atol=1e-14)
    s = a.alpha
    assert np.all(s <= 1 + 1e-12) and np.all(1 - s >= -1e-12)


def test_resolution_doubling():
    cam, g, colors = random_scene(2, n=8, size=8)
    hi = Camera(16, 16, 2 * cam.fx, 2 * cam.fy, 2 * cam.cx - 0.5, 2 * cam.cy - 0.5, cam.R, cam.t)
    lo_img = render(cam, g, colors).color
    hi_img = render(hi, g, colors).color
    np.testing.assert_allclose(hi_img[::2, ::2], lo_img, atol=1e-12)


def test_normals_face_camera(scene5):
    cam, g, colors = scene5
    out = render(cam, g, colors)
    d = cam.pixel_directions()
    assert np.all(np.sum(out.normal_map * d, axis=-1) <= 1e-12)


# ------------------------------------------------------------------ backward

def test_zero_upstream_zero_grads(scene5):
    out = render(*scene5)
    gr = render_backward(out, RenderUpstream())
    for a in (gr.centroids, gr.quaternions, gr.log_scales, gr.opacity_logits, gr.colors):
        assert not np.any(a)


def test_color_grad_is_weight():
    g = gset(disk(logit_o=0.3))
    out = render(pinhole(), g, np.array([[0.2, 0.4, 0.6]]))
    gr = render_backward(out, RenderUpstream(color=np.ones((1, 1, 3))))
    np.testing.assert_allclose(gr.colors[0], out.fragments.weight[0])


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_gradient_audit(seed):
    worst, checked, failures, skipped = audit_render(*random_scene(seed), seed=seed)
    assert checked >= 50 and not failures, failures[:3]


# ------------------------------------------------------------------ losses

def test_rgb_identical_and_mismatch():
    img = np.random.default_rng(0).random((16, 16, 3))
    assert rgb_loss(img, img)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        rgb_loss(img, img[:8])


def test_rgb_black_vs_gray():
    black, gray = np.zeros((16, 16, 3)), np.full((16, 16, 3), 0.5)
    loss, _ = rgb_loss(black, gray)
    oracle = structural_similarity(black, gray, channel_axis=2, data_range=1.0, gaussian_weights=True,
                                   sigma=1.5, use_sample_covariance=False)
    assert loss == pytest.approx(0.4 + 0.2 * (1 - oracle), abs=1e-9)


def test_ssim_map_matches_skimage():
    rng = np.random.default_rng(1)
    x, y = rng.random((32, 32)), rng.random((32, 32))
    _, full = structural_similarity(x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, full=True)
    np.testing.assert_allclose(ssim_map(x, y), full, atol=1e-12)


def test_rgb_empty_mask():
    a, b = np.zeros((8, 8, 3)), np.ones((8, 8, 3))
    loss, grad = rgb_loss(a, b, mask=np.zeros((8, 8)))
    assert loss == 0 and not grad.any()


def test_rgb_gradient_fd():
    rng = np.random.default_rng(2)
    x, y = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    mask = rng.random((12, 12)) > 0.3
    _, g = rgb_loss(x, y, mask)
    for idx in [(0, 0, 0), (5, 6, 1), (11, 3, 2), (7, 7, 0)]:
        e = np.zeros_like(x)
        e[idx] = 1e-6
        fd = (rgb_loss(x + e, y, mask)[0] - rgb_loss(x - e, y, mask)[0]) / 2e-6
        assert fd == pytest.approx(g[idx], rel=1e-4, abs=1e-9)


def test_distortion_closed_forms():
    loss, _, _ = kernels.distortion(np.array([0, 1]), np.array([0.7]), np.array([2.0]))
    assert loss[0] == 0
    loss, _, _ = kernels.distortion(np.array([0, 2]), np.array([0.5, 0.5]), np.array([0.0, 1.0]))
    assert loss[0] == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 7), min_size=1, max_size=10), st.integers(0, 2 ** 31))
def test_distortion_brute_force(counts, seed):
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    w, z = rng.random(offsets[-1]), rng.random(offsets[-1]) * 3
    loss, gw, gz = kernels.distortion(offsets, w, z)
    for p in range(len(counts)):
        s = slice(offsets[p], offsets[p + 1])
        ww, zz = w[s], z[s]
        pair = np.abs(zz[:, None] - zz[None, :])
        assert loss[p] == pytest.approx(np.sum(ww[:, None] * ww[None, :] * pair), abs=1e-12)
        np.testing.assert_allclose(gw[s], 2 * pair @ ww, atol=1e-12)
        np.testing.assert_allclose(gz[s], 2 * ww * (np.sign(zz[:, None] - zz[None, :]) @ ww), atol=1e-12)


def test_distortion_loss_is_pixel_mean(scene5):
    out = render(*scene5)
    loss, _ = depth_distortion_loss(out)
    per, _, _ = kernels.distortion(out.fragments.offsets, out.fragments.weight, out.fragments.depth)
    assert loss == pytest.approx(per.mean())


def _plane(tilt=0.0, disk_tilt=None, size=16):
    """Grid of opaque disks on a plane through the origin, tilted by `tilt` about x."""
    disk_tilt = tilt if disk_tilt is None else disk_tilt
    cam = Camera.look_at((0, 0, 3.0), up=(0, 1, 0), width=size, height=size, fx=size * 1.2)
    q_plane = (np.cos(tilt / 2), np.sin(tilt / 2), 0, 0)
    q_disk = np.array([np.cos(disk_tilt / 2), np.sin(disk_tilt / 2), 0, 0])
    R = quaternion_to_matrix(np.array(q_plane))
    xs = np.linspace(-1.5, 1.5, 25)
    pts = np.array([R @ np.array([a, b, 0.0]) for a in xs for b in xs])
    n = len(pts)
    g = GaussianSet(pts, np.tile(q_disk, (n, 1)), np.full((n, 2), np.log(0.12)), np.full(n, 6.0), np.zeros((n, 3)))
    return cam, g


def test_dnc_fronto_parallel_plane_is_zero():
    cam, g = _plane()
    out = rasterize(cam, g)
    loss, _ = depth_normal_consistency_loss(out, cam)
    assert loss < 1e-6


def test_dnc_border_pixels_excluded():
    from gsurf.splat.losses import depth_normals
    cam, g = _plane()
    _, valid, _ = depth_normals(rasterize(cam, g))
    assert not valid[0].any() and not valid[-1].any() and not valid[:, 0].any() and not valid[:, -1].any()
    assert valid[1:-1, 1:-1].all()


def test_dnc_decreases_toward_true_normal():
    tilt = 0.5
    losses = [depth_normal_consistency_loss(rasterize(*cams), None)[0]
              for cams in (_plane(tilt, tilt * k) for k in (0.0, 0.25, 0.5, 0.75, 1.0))]
    assert all(a > b for a, b in zip(losses, losses[1:])), losses
