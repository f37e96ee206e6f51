"""Image-space losses on render outputs. Each returns (value, gradient)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d

from . import kernels
from .render import RenderOutput, RenderUpstream

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    k = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return k / k.sum()


@lru_cache(maxsize=32)
def _filter_matrix(n: int) -> np.ndarray:
    # reflect-padded filtering along one axis as an explicit n x n operator
    m = correlate1d(np.eye(n), gaussian_window(), axis=0, mode="reflect")
    m.setflags(write=False)
    return m


def _blur(img: np.ndarray, adjoint: bool = False) -> np.ndarray:
    A, B = _filter_matrix(img.shape[0]), _filter_matrix(img.shape[1])
    if adjoint:
        A, B = A.T, B.T
    return np.einsum("ij,jk...->ik...", A, np.einsum("kl,il...->ik...", B, img))


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _ssim_terms(np.asarray(x, np.float64), np.asarray(y, np.float64))[0]


def _ssim_terms(x, y):
    mx, my = _blur(x), _blur(y)
    sxx, syy, sxy = _blur(x * x), _blur(y * y), _blur(x * y)
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * (sxy - mx * my) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (sxx - mx * mx) + (syy - my * my) + SSIM_C2
    s = a1 * a2 / (b1 * b2)
    return s, (mx, my, a1, a2, b1, b2)


def ssim_backward(x, y, g_s):
    """Gradient of sum(g_s * ssim_map(x, y)) with respect to x."""
    s, (mx, my, a1, a2, b1, b2) = _ssim_terms(x, y)
    inv = 1.0 / (b1 * b2)
    d_mx = (2 * my * a2 - 2 * my * a1) * inv - s * (2 * mx / b1 - 2 * mx / b2)
    d_sxx = -s / b2
    d_sxy = 2 * a1 * inv
    return (_blur(g_s * d_mx, True) + 2 * x * _blur(g_s * d_sxx, True)
            + y * _blur(g_s * d_sxy, True))


def rgb_loss(rendered: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None,
             ssim_weight: float = 0.2) -> tuple[float, np.ndarray]:
    """(1 - ssim_weight) * L1 + ssim_weight * (1 - SSIM) over masked pixels, and its gradient."""
    rendered = np.asarray(rendered, np.float64)
    target = np.asarray(target, np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    H, W, ch = rendered.shape
    m = np.ones((H, W)) if mask is None else np.asarray(mask, np.float64).reshape(H, W)
    count = m.sum() * ch
    if count == 0:
        return 0.0, np.zeros_like(rendered)
    m3 = m[..., None]
    diff = rendered - target
    l1 = float(np.sum(np.abs(diff) * m3) / count)
    s = ssim_map(rendered, target)
    ssim = float(np.sum(s * m3) / count)
    loss = (1 - ssim_weight) * l1 + ssim_weight * (1 - ssim)
    grad = (1 - ssim_weight) * np.sign(diff) * m3 / count
    if ssim_weight:
        grad -= ssim_weight * ssim_backward(rendered, target, np.broadcast_to(m3, s.shape) / count)
    return loss, grad


def depth_distortion_loss(output: RenderOutput) -> tuple[float, RenderUpstream]:
    """Mean over pixels of sum_{i,j} w_i w_j |z_i - z_j| across each pixel's fragments."""
    f = output.fragments
    per_pixel, g_w, g_z = kernels.distortion(f.offsets, f.weight, f.depth)
    npix = len(per_pixel)
    return float(per_pixel.mean()), RenderUpstream(fragment_weight=g_w / npix, fragment_depth=g_z / npix)


def depth_normals(output: RenderOutput):
    """Normals of the unprojected expected-depth surface by central differences.

    Returns (normals (H, W, 3), valid mask, cache for the backward pass).
    Border pixels have no central neighbors and are never valid.
    """
    cam = output.camera
    H, W = output.alpha.shape
    d = cam.pixel_directions()
    X = cam.center + output.expected_depth[..., None] * d
    a = np.zeros((H, W, 3))
    b = np.zeros((H, W, 3))
    a[1:-1, 1:-1] = X[2:, 1:-1] - X[:-2, 1:-1]
    b[1:-1, 1:-1] = X[1:-1, 2:] - X[1:-1, :-2]
    c = np.cross(a, b)
    norm = np.linalg.norm(c, axis=-1)
    valid = np.zeros((H, W), dtype=bool)
    valid[1:-1, 1:-1] = True
    valid &= (output.alpha > 0.5) & (norm > 1e-12)
    N = np.where(valid[..., None], c / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    return N, valid, (d, a, b, norm)


def depth_normal_consistency_loss(output: RenderOutput, camera=None) -> tuple[float, RenderUpstream]:
    """Mean over valid pixels of sum_i w_i (1 - n_i . N_depth) = alpha - N_gs . N_depth."""
    N, valid, (d, a, b, norm) = depth_normals(output)
    count = int(valid.sum())
    H, W = valid.shape
    if count == 0:
        return 0.0, RenderUpstream()
    Ngs = output.normal_map
    vm = valid[..., None]
    loss = float(np.sum((output.alpha - np.sum(Ngs * N, axis=-1))[valid]) / count)
    g_alpha = valid / count
    g_normal = -N * vm / count
    # through N_depth = c/|c|, c = a x b
    gN = -Ngs * vm / count
    safe = np.where(norm > 0, norm, 1.0)[..., None]
    gc = (gN - N * np.sum(N * gN, axis=-1, keepdims=True)) / safe * vm
    ga = np.cross(b, gc)
    gb = np.cross(gc, a)
    gX = np.zeros((H, W, 3))
    gX[2:, 1:-1] += ga[1:-1, 1:-1]
    gX[:-2, 1:-1] -= ga[1:-1, 1:-1]
    gX[1:-1, 2:] += gb[1:-1, 1:-1]
    gX[1:-1, :-2] -= gb[1:-1, 1:-1]
    g_ed = np.sum(gX * d, axis=-1)
    return loss, RenderUpstream(alpha=g_alpha, normal_map=g_normal, expected_depth=g_ed)
