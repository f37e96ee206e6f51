"""Synthetic multi-view scenes: analytic shapes, a view-sphere rig and a ray-traced target renderer.

The target renderer intersects camera rays with the ground-truth triangles
directly and shades them analytically, sharing no code with the splatting
rasterizer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from ..core.io import export_mesh_ply, import_mesh_ply, load_cameras, read_png, save_cameras, write_png
from ..core.types import Camera, TriangleMesh

SHAPES = ("sphere", "torus", "box-union")
CAMERA_RADIUS = 2.5
LIGHT_DIR = np.array([0.4, 0.3, 0.866]) / np.linalg.norm([0.4, 0.3, 0.866])


# ---------------------------------------------------------------- shapes

def icosphere(radius: float = 1.0, subdivisions: int = 4) -> TriangleMesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
             (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11),
             (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    F = faces
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = V[a] + V[b]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        new = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = new
    V = np.array(V)
    return TriangleMesh(radius * V, np.array(F), V.copy())


def torus_mesh(major: float = 0.5, minor: float = 0.22, n_major: int = 96, n_minor: int = 48) -> TriangleMesh:
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    U, Vv = np.meshgrid(u, v, indexing="ij")
    ring = np.stack([np.cos(U), np.sin(U), np.zeros_like(U)], -1)
    normals = np.cos(Vv)[..., None] * ring + np.sin(Vv)[..., None] * np.array([0.0, 0.0, 1.0])
    verts = major * ring + minor * normals
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    i00 = idx
    i10 = np.roll(idx, -1, axis=0)
    i01 = np.roll(idx, -1, axis=1)
    i11 = np.roll(i10, -1, axis=1)
    tris = np.concatenate([np.stack([i00, i10, i11], -1).reshape(-1, 3),
                           np.stack([i00, i11, i01], -1).reshape(-1, 3)])
    return TriangleMesh(verts.reshape(-1, 3), tris, normals.reshape(-1, 3))


BOXES = (((-0.55, -0.35, -0.35), (0.25, 0.35, 0.35)), ((-0.1, -0.5, -0.25), (0.55, 0.2, 0.45)))


def box_union_sdf(points: np.ndarray) -> np.ndarray:
    out = np.full(len(points), np.inf)
    for lo, hi in BOXES:
        c = (np.array(lo) + np.array(hi)) / 2
        h = (np.array(hi) - np.array(lo)) / 2
        q = np.abs(points - c) - h
        d = np.linalg.norm(np.maximum(q, 0.0), axis=1) + np.minimum(q.max(axis=1), 0.0)
        out = np.minimum(out, d)
    return out


def box_union_mesh(resolution: int = 96) -> TriangleMesh:
    from ..extract.mesh import marching_cubes

    return marching_cubes(box_union_sdf, resolution, bounds=(-1.0, 1.0))


def shape_mesh(shape: str) -> TriangleMesh:
    if shape == "sphere":
        return icosphere(0.6, 4)
    if shape == "torus":
        return torus_mesh()
    if shape == "box-union":
        return box_union_mesh()
    raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")


# ---------------------------------------------------------------- cameras

def fibonacci_cameras(n_views: int, resolution: int, radius: float = CAMERA_RADIUS) -> list[Camera]:
    golden = np.pi * (3.0 - np.sqrt(5.0))
    cams = []
    # horizontal field of view spans +-1.0 at the origin's distance
    f = (resolution / 2) * radius / 1.0
    for i in range(n_views):
        z = 1.0 - (2 * i + 1) / n_views
        r = np.sqrt(max(0.0, 1.0 - z * z))
        eye = radius * np.array([r * np.cos(golden * i), r * np.sin(golden * i), z])
        cams.append(Camera.look_at(eye, width=resolution, height=resolution, fx=f))
    return cams


# ---------------------------------------------------------------- target renderer

@numba.njit(cache=True)
def _trace(origin, dirs, V, F):
    n = dirs.shape[0]
    hit_t = np.full(n, np.inf)
    hit_f = np.full(n, -1, dtype=np.int64)
    hit_b = np.zeros((n, 2))
    for k in range(F.shape[0]):
        a = V[F[k, 0]]
        e1 = V[F[k, 1]] - a
        e2 = V[F[k, 2]] - a
        s = origin - a
        for i in range(n):
            d = dirs[i]
            px = d[1] * e2[2] - d[2] * e2[1]
            py = d[2] * e2[0] - d[0] * e2[2]
            pz = d[0] * e2[1] - d[1] * e2[0]
            det = e1[0] * px + e1[1] * py + e1[2] * pz
            if abs(det) < 1e-14:
                continue
            inv = 1.0 / det
            u = (s[0] * px + s[1] * py + s[2] * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = s[1] * e1[2] - s[2] * e1[1]
            qy = s[2] * e1[0] - s[0] * e1[2]
            qz = s[0] * e1[1] - s[1] * e1[0]
            v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
            if 1e-9 < t < hit_t[i]:
                hit_t[i] = t
                hit_f[i] = k
                hit_b[i, 0] = u
                hit_b[i, 1] = v
    return hit_t, hit_f, hit_b


def albedo(points: np.ndarray) -> np.ndarray:
    """Smooth color texture so views carry photometric detail."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    rgb = np.stack([
        0.55 + 0.3 * np.sin(5.0 * x + 1.0) * np.cos(3.0 * y),
        0.5 + 0.3 * np.sin(4.0 * y + 2.0) * np.cos(5.0 * z),
        0.45 + 0.3 * np.sin(6.0 * z) * np.cos(4.0 * x + 3.0),
    ], axis=1)
    return np.clip(rgb, 0.05, 0.95)


def render_mesh(mesh: TriangleMesh, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Lambertian plus a weak specular lobe; black background. Returns (image, coverage mask)."""
    H, W = camera.height, camera.width
    dirs = camera.pixel_directions().reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs / np.linalg.norm(dirs, axis=1, keepdims=True))
    t, f, b = _trace(camera.center, dirs, np.ascontiguousarray(mesh.vertices), np.ascontiguousarray(mesh.triangles))
    hit = f >= 0
    img = np.zeros((H * W, 3))
    if hit.any():
        tri = mesh.triangles[f[hit]]
        bary = np.column_stack([1 - b[hit, 0] - b[hit, 1], b[hit, 0], b[hit, 1]])
        if mesh.vertex_normals is not None:
            n = np.einsum("ki,kij->kj", bary, mesh.vertex_normals[tri])
        else:
            Vt = mesh.vertices[tri]
            n = np.cross(Vt[:, 1] - Vt[:, 0], Vt[:, 2] - Vt[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        d = dirs[hit]
        n[np.sum(n * d, axis=1) > 0] *= -1
        p = camera.center + t[hit, None] * d
        diffuse = 0.25 + 0.75 * np.maximum(np.sum(n * LIGHT_DIR, axis=1), 0.0)
        half = LIGHT_DIR - d
        half /= np.linalg.norm(half, axis=1, keepdims=True)
        spec = 0.15 * np.maximum(np.sum(n * half, axis=1), 0.0) ** 20
        img[hit] = albedo(p) * diffuse[:, None] + spec[:, None]
    return np.clip(img, 0.0, 1.0).reshape(H, W, 3), hit.reshape(H, W)


# ---------------------------------------------------------------- scene container

@dataclass
class SyntheticScene:
    mesh: TriangleMesh
    cameras: list
    images: list
    masks: list | None = None
    meta: dict = field(default_factory=dict)

    def save(self, root) -> None:
        root = Path(root)
        (root / "images").mkdir(parents=True, exist_ok=True)
        save_cameras(root / "cameras.json", self.cameras)
        for i, img in enumerate(self.images):
            write_png(root / "images" / f"view_{i:03d}.png", img)
        if self.masks is not None:
            (root / "masks").mkdir(exist_ok=True)
            for i, m in enumerate(self.masks):
                write_png(root / "masks" / f"view_{i:03d}.png", np.repeat(m[..., None].astype(float), 3, -1))
        export_mesh_ply(self.mesh, root / "gt_mesh.ply", binary=True)
        (root / "scene.json").write_text(json.dumps(self.meta, indent=2))

    @classmethod
    def load(cls, root) -> SyntheticScene:
        root = Path(root)
        if not (root / "cameras.json").is_file():
            raise FileNotFoundError(f"{root} is not a scene directory (no cameras.json)")
        cameras = load_cameras(root / "cameras.json")
        images = [read_png(root / "images" / f"view_{i:03d}.png") for i in range(len(cameras))]
        masks = None
        if (root / "masks").is_dir():
            masks = [read_png(root / "masks" / f"view_{i:03d}.png")[..., 0] > 0.5 for i in range(len(cameras))]
        mesh = import_mesh_ply(root / "gt_mesh.ply") if (root / "gt_mesh.ply").is_file() else None
        meta = json.loads((root / "scene.json").read_text()) if (root / "scene.json").is_file() else {}
        return cls(mesh, cameras, images, masks, meta)


def generate_scene(shape: str = "sphere", n_views: int = 16, resolution: int = 64, seed: int = 0) -> SyntheticScene:
    """Ground-truth mesh, a Fibonacci view-sphere rig at radius 2.5 and ray-traced targets.

    The scene is fully determined by its arguments; `seed` is recorded and
    rotates the rig about the vertical axis.
    """
    mesh = shape_mesh(shape)
    cams = fibonacci_cameras(n_views, resolution)
    angle = 2 * np.pi * np.random.default_rng(seed).random() if seed else 0.0
    if angle:
        c, s = np.cos(angle), np.sin(angle)
        Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        cams = [Camera(cm.width, cm.height, cm.fx, cm.fy, cm.cx, cm.cy, cm.R @ Rz.T, cm.t) for cm in cams]
    images, masks = zip(*(render_mesh(mesh, cam) for cam in cams)) if cams else ((), ())
    meta = {"shape": shape, "n_views": n_views, "resolution": resolution, "seed": seed}
    return SyntheticScene(mesh, list(cams), list(images), list(masks), meta)
