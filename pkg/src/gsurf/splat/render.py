from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from ..core.types import Camera, GaussianPrimitive, GaussianSet, quaternion_matrix_backward
from . import kernels

NEAR = kernels.NEAR
CUTOFF = 3.0
MIN_TRANSMITTANCE = 1e-4


def ray_disk_intersect(camera: Camera, pixel, primitive: GaussianPrimitive):
    """Local disk coordinates and camera depth where a pixel's central ray meets the disk.

    Returns ((u, v), depth), or None when the ray is parallel to the disk
    plane, the hit lies behind the near plane, or the hit is beyond 3 sigma.
    """
    row, col = pixel
    C, d = camera.ray(row, col)
    R = primitive.rotation
    n = R[:, 2]
    denom = float(n @ d)
    if abs(denom) < kernels.PARALLEL_EPS * np.linalg.norm(d):
        return None
    a = primitive.centroid - C
    t = float(n @ a) / denom
    if t <= NEAR:
        return None
    delta = t * d - a
    u = float(R[:, 0] @ delta) / primitive.scale_u
    v = float(R[:, 1] @ delta) / primitive.scale_v
    if u * u + v * v > CUTOFF * CUTOFF:
        return None
    return (u, v), t


@dataclass
class Fragments:
    """Per-pixel fragment lists in blending order (CSR layout over flattened pixels)."""

    offsets: np.ndarray
    gaussian_index: np.ndarray
    weight: np.ndarray
    kernel: np.ndarray
    depth: np.ndarray
    transmittance: np.ndarray
    u: np.ndarray
    v: np.ndarray
    sign: np.ndarray

    def __len__(self) -> int:
        return len(self.weight)

    def pixel(self, p: int) -> list[tuple[int, float, float, float]]:
        s = slice(self.offsets[p], self.offsets[p + 1])
        return list(zip(self.gaussian_index[s].tolist(), self.weight[s].tolist(),
                        self.kernel[s].tolist(), self.depth[s].tolist()))

    @property
    def pixel_of(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.offsets) - 1), np.diff(self.offsets))


@dataclass
class _Geometry:
    P: np.ndarray
    TU: np.ndarray
    TV: np.ndarray
    NR: np.ndarray
    SU: np.ndarray
    SV: np.ndarray
    OP: np.ndarray

    @classmethod
    def of(cls, g: GaussianSet) -> _Geometry:
        R = g.rotations
        S = g.scales
        return cls(np.ascontiguousarray(g.centroids), np.ascontiguousarray(R[:, :, 0]),
                   np.ascontiguousarray(R[:, :, 1]), np.ascontiguousarray(R[:, :, 2]),
                   np.ascontiguousarray(S[:, 0]), np.ascontiguousarray(S[:, 1]), g.opacities)


@dataclass
class RenderOutput:
    color: np.ndarray
    expected_depth: np.ndarray
    median_depth: np.ndarray
    alpha: np.ndarray
    normal_map: np.ndarray
    fragments: Fragments
    camera: Camera
    gaussians: GaussianSet
    colors: np.ndarray
    depth_numerator: np.ndarray
    median_index: np.ndarray
    geometry: _Geometry = field(repr=False)

    @property
    def visible(self) -> np.ndarray:
        """Indices of Gaussians contributing at least one fragment."""
        return np.unique(self.fragments.gaussian_index)

    def peak_weight(self) -> np.ndarray:
        """Largest blending weight T * alpha of each Gaussian over all pixels (0 when unseen)."""
        w = np.zeros(len(self.gaussians))
        np.maximum.at(w, self.fragments.gaussian_index, self.fragments.weight)
        return w

    def with_colors(self, colors: np.ndarray) -> RenderOutput:
        """Re-composite the stored fragments with new per-Gaussian colors."""
        colors = np.ascontiguousarray(colors, dtype=np.float64)
        f = self.fragments
        H, W = self.alpha.shape
        color = kernels.composite(f.offsets, f.gaussian_index, f.weight, colors).reshape(H, W, -1)
        out = RenderOutput(**{fl.name: getattr(self, fl.name) for fl in fields(self)})
        out.color = color
        out.colors = colors
        return out


def depth_order(camera: Camera, centroids: np.ndarray) -> np.ndarray:
    """Blending order: ascending camera depth of centers, ties broken by index."""
    z = camera.world_to_camera(centroids)[:, 2]
    return np.argsort(z, kind="stable")


def screen_bboxes(camera: Camera, geom: _Geometry) -> np.ndarray:
    """Conservative pixel bounding boxes (c0, c1, r0, r1) of each 3-sigma disk; empty when behind."""
    n = len(geom.P)
    bbox = np.zeros((n, 4), dtype=np.int64)
    if n == 0:
        return bbox
    su = (CUTOFF * geom.SU)[:, None] * geom.TU
    sv = (CUTOFF * geom.SV)[:, None] * geom.TV
    corners = np.stack([geom.P + su + sv, geom.P + su - sv, geom.P - su + sv, geom.P - su - sv], 1)
    cam = corners @ camera.R.T + camera.t
    z = cam[..., 2]
    in_front = np.all(z > NEAR, axis=1)
    any_front = np.any(z > NEAR, axis=1)
    zs = np.where(z > NEAR, z, 1.0)
    x = camera.fx * cam[..., 0] / zs + camera.cx
    y = camera.fy * cam[..., 1] / zs + camera.cy
    with np.errstate(invalid="ignore"):
        c0 = np.ceil(x.min(1) - 0.5) - 1
        c1 = np.floor(x.max(1) - 0.5) + 1
        r0 = np.ceil(y.min(1) - 0.5) - 1
        r1 = np.floor(y.max(1) - 0.5) + 1
    W, H = camera.width, camera.height
    c0 = np.where(in_front, c0, 0)
    c1 = np.where(in_front, c1, W - 1)
    r0 = np.where(in_front, r0, 0)
    r1 = np.where(in_front, r1, H - 1)
    bbox[:, 0] = np.clip(c0, 0, W)
    bbox[:, 1] = np.clip(c1, -1, W - 1)
    bbox[:, 2] = np.clip(r0, 0, H)
    bbox[:, 3] = np.clip(r1, -1, H - 1)
    bbox[~any_front] = (1, 0, 1, 0)
    return bbox


def rasterize(camera: Camera, gaussians: GaussianSet, *, tile: int = 8,
              min_transmittance: float = MIN_TRANSMITTANCE) -> RenderOutput:
    """Fragments and geometric maps for a view; colors are composited by `render`."""
    geom = _Geometry.of(gaussians)
    H, W = camera.height, camera.width
    order = depth_order(camera, geom.P)
    bbox = screen_bboxes(camera, geom)
    tile_offsets, tile_ids = kernels.bin_tiles(order, bbox, W, H, tile)
    raw = kernels.rasterize(camera.R, camera.center, camera.fx, camera.fy, camera.cx, camera.cy, W, H,
                            geom.P, geom.TU, geom.TV, geom.NR, geom.SU, geom.SV, geom.OP, bbox,
                            tile_offsets, tile_ids, tile, float(min_transmittance))
    frags = Fragments(*raw)
    alpha, dnum, normal, median = kernels.pixel_maps(frags.offsets, frags.gaussian_index, frags.weight,
                                                     frags.depth, frags.transmittance, frags.sign, geom.NR)
    expected = dnum / np.maximum(alpha, 1e-8)
    median_depth = np.where(median >= 0, frags.depth[np.maximum(median, 0)] if len(frags) else 0.0, 0.0)
    return RenderOutput(
        color=np.zeros((H, W, 3)),
        expected_depth=expected.reshape(H, W),
        median_depth=median_depth.reshape(H, W),
        alpha=alpha.reshape(H, W),
        normal_map=normal.reshape(H, W, 3),
        fragments=frags,
        camera=camera,
        gaussians=gaussians,
        colors=np.zeros((len(gaussians), 3)),
        depth_numerator=dnum,
        median_index=median,
        geometry=geom,
    )


def render(camera: Camera, gaussians: GaussianSet, colors: np.ndarray, *, tile: int = 8,
           min_transmittance: float = MIN_TRANSMITTANCE) -> RenderOutput:
    colors = np.asarray(colors, dtype=np.float64)
    if colors.shape != (len(gaussians), 3):
        raise ValueError(f"colors must have shape ({len(gaussians)}, 3), got {colors.shape}")
    return rasterize(camera, gaussians, tile=tile, min_transmittance=min_transmittance).with_colors(colors)


@dataclass
class RenderUpstream:
    """Gradients of a scalar loss w.r.t. the render maps (and optionally raw fragments)."""

    color: np.ndarray | None = None
    expected_depth: np.ndarray | None = None
    median_depth: np.ndarray | None = None
    alpha: np.ndarray | None = None
    normal_map: np.ndarray | None = None
    fragment_weight: np.ndarray | None = None
    fragment_depth: np.ndarray | None = None

    def __iadd__(self, other: RenderUpstream) -> RenderUpstream:
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if b is not None:
                setattr(self, f.name, b.copy() if a is None else a + b)
        return self

    def scaled(self, s: float) -> RenderUpstream:
        return RenderUpstream(**{f.name: None if getattr(self, f.name) is None else s * getattr(self, f.name)
                                 for f in fields(self)})

    def __add__(self, other: RenderUpstream) -> RenderUpstream:
        out = self.scaled(1.0)
        out += other
        return out

    def __rmul__(self, s: float) -> RenderUpstream:
        return self.scaled(s)


@dataclass
class GaussianGrads:
    centroids: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray


def render_backward(output: RenderOutput, upstream: RenderUpstream) -> GaussianGrads:
    H, W = output.alpha.shape
    npix = H * W
    nf = len(output.fragments)

    def grab(x, shape):
        if x is None:
            return np.zeros(shape)
        return np.ascontiguousarray(np.reshape(x, shape), dtype=np.float64)

    g_color = grab(upstream.color, (npix, 3))
    g_normal = grab(upstream.normal_map, (npix, 3))
    g_alpha = grab(upstream.alpha, (npix,))
    g_ed = grab(upstream.expected_depth, (npix,))
    g_md = grab(upstream.median_depth, (npix,))
    g_fw = grab(upstream.fragment_weight, (nf,))
    g_fz = grab(upstream.fragment_depth, (nf,))

    geom = output.geometry
    f = output.fragments
    cam = output.camera
    dP, dTU, dTV, dNR, dlsu, dlsv, dlogit, dcol = kernels.backward(
        cam.R, cam.center, cam.fx, cam.fy, cam.cx, cam.cy, W, geom.P, geom.TU, geom.TV, geom.NR, geom.SU,
        geom.SV, geom.OP, output.colors, f.offsets, f.gaussian_index, f.weight, f.kernel, f.depth,
        f.transmittance, f.u, f.v, f.sign, np.ascontiguousarray(output.alpha.reshape(-1)),
        output.depth_numerator, output.median_index, g_color, g_alpha, g_ed, g_md, g_normal, g_fw, g_fz)
    dR = np.stack([dTU, dTV, dNR], axis=-1)
    dq = quaternion_matrix_backward(output.gaussians.quaternions, dR) if len(dR) else np.zeros((0, 4))
    return GaussianGrads(dP, dq, np.stack([dlsu, dlsv], axis=1), dlogit, dcol)
