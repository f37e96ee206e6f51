"""Iso-surface extraction from a scalar field and SDF normal maps."""

from __future__ import annotations

from typing import Callable

import numpy as np
from skimage.measure import marching_cubes as _skimage_mc

from ..core.types import Camera, TriangleMesh

Field = Callable[[np.ndarray], np.ndarray]


def as_field(sdf) -> Field:
    """Wrap a FieldNetwork (distance = first output) or pass a callable through."""
    from ..neural import FieldNetwork, sdf_values

    if isinstance(sdf, FieldNetwork):
        return lambda pts: sdf_values(sdf, pts)
    return sdf


def field_gradient(field: Field, points: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a field at each point."""
    points = np.asarray(points, np.float64).reshape(-1, 3)
    n = len(points)
    offs = np.concatenate([np.eye(3), -np.eye(3)]) * h
    vals = np.asarray(field((points[None] + offs[:, None]).reshape(-1, 3)), np.float64).reshape(6, n)
    return ((vals[:3] - vals[3:]) / (2 * h)).T


def grid_values(field: Field, resolution: int, bounds=(-1.0, 1.0), chunk: int = 1 << 18) -> np.ndarray:
    lo, hi = bounds
    axis = np.linspace(lo, hi, resolution)
    out = np.empty((resolution,) * 3)
    flat = out.reshape(-1)
    # slab by slab along x to bound memory
    yz = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
    per_slab = len(yz)
    slabs = max(1, chunk // per_slab)
    for i0 in range(0, resolution, slabs):
        xs = axis[i0:i0 + slabs]
        pts = np.concatenate([np.column_stack([np.full(per_slab, x), yz]) for x in xs])
        flat[i0 * per_slab:(i0 + len(xs)) * per_slab] = np.asarray(field(pts), np.float64).reshape(-1)
    return out


def _refine_vertices(idx_verts: np.ndarray, volume: np.ndarray) -> np.ndarray:
    """Redo the edge interpolation in float64 (the library interpolates in float32)."""
    v = idx_verts.astype(np.float64)
    r = np.round(v)
    frac = np.abs(v - r) > 1e-6
    on_edge = frac.sum(axis=1) == 1
    out = v.copy()
    n = volume.shape[0]
    for k in np.nonzero(on_edge)[0]:
        a = int(np.nonzero(frac[k])[0][0])
        i0 = r[k].astype(int)
        i0[a] = int(np.floor(v[k, a]))
        i1 = i0.copy()
        i1[a] += 1
        if i1[a] >= n:
            continue
        f0, f1 = volume[tuple(i0)], volume[tuple(i1)]
        if f0 != f1:
            out[k] = i0
            out[k, a] = i0[a] + f0 / (f0 - f1)
    return out


def marching_cubes(sdf, resolution: int = 128, bounds=(-1.0, 1.0), h: float = 1e-4,
                   volume: np.ndarray | None = None) -> TriangleMesh:
    """Zero level set of a field sampled on a resolution^3 grid over bounds^3.

    Vertex normals are the normalized central-difference field gradient. A
    field that never changes sign gives an empty mesh.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    field = as_field(sdf)
    vol = grid_values(field, resolution, bounds) if volume is None else np.asarray(volume, np.float64)
    if not (vol.min() < 0.0 < vol.max()):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))
    verts, faces, _, _ = _skimage_mc(vol, level=0.0, gradient_direction="descent", allow_degenerate=False)
    verts = _refine_vertices(verts, vol)
    lo, hi = bounds
    verts = lo + verts * ((hi - lo) / (resolution - 1))
    verts, faces = _weld(verts, faces.astype(np.int64))
    faces = _drop_degenerate(verts, faces)
    used = np.unique(faces)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts, faces = verts[used], remap[faces]
    normals = field_gradient(field, verts, h)
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)
    return TriangleMesh(verts, faces, normals)


def _weld(verts: np.ndarray, faces: np.ndarray):
    _, first, inverse = np.unique(verts, axis=0, return_index=True, return_inverse=True)
    return verts[first], inverse.reshape(-1)[faces]


def _drop_degenerate(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    if len(faces) == 0:
        return faces
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    distinct = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return faces[distinct & (area2 > 0.0)]


def unproject(camera: Camera, depth: np.ndarray) -> np.ndarray:
    """World points C + depth * d per pixel (d has unit camera-z, so depth is camera depth)."""
    return camera.center + np.asarray(depth)[..., None] * camera.pixel_directions()


def sdf_normal_map(sdf, camera: Camera, median_depth: np.ndarray, alpha: np.ndarray,
                   h: float = 1e-4) -> np.ndarray:
    """Unit field normals at the unprojected median depth of covered pixels, flipped to face the camera."""
    gradient_fn = sdf if getattr(sdf, "is_gradient", False) else None
    mask = np.asarray(alpha) > 0.5
    out = np.zeros(mask.shape + (3,))
    if not mask.any():
        return out
    X = unproject(camera, median_depth)[mask]
    g = gradient_fn(X) if gradient_fn is not None else field_gradient(as_field(sdf), X, h)
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    d = camera.pixel_directions()[mask]
    g[np.sum(g * d, axis=1) > 0] *= -1.0
    out[mask] = g
    return out
