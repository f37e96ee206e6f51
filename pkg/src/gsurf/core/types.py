"""Plain value types shared by the renderer, the field networks and the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def logistic(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (w, x, y, z) quaternions; input need not be unit."""
    r, x, y, z = np.moveaxis(normalize_quaternions(q), -1, 0)
    R = np.empty(np.shape(q)[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - r * z)
    R[..., 0, 2] = 2 * (x * z + r * y)
    R[..., 1, 0] = 2 * (x * y + r * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - r * x)
    R[..., 2, 0] = 2 * (x * z - r * y)
    R[..., 2, 1] = 2 * (y * z + r * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quaternion_matrix_backward(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. quaternion_to_matrix(q) back onto the raw quaternion q."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    r, x, y, z = np.moveaxis(q / norm, -1, 0)
    g = dR
    dr = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
              - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    dx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0]
              - 2 * x * g[..., 1, 1] - r * g[..., 1, 2] + z * g[..., 2, 0]
              + r * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    dy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + r * g[..., 0, 2]
              + x * g[..., 1, 0] + z * g[..., 1, 2] - r * g[..., 2, 0]
              + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    dz = 2 * (-2 * z * g[..., 0, 0] - r * g[..., 0, 1] + x * g[..., 0, 2]
              + r * g[..., 1, 0] - 2 * z * g[..., 1, 1] + y * g[..., 1, 2]
              + x * g[..., 2, 0] + y * g[..., 2, 1])
    dqhat = np.stack([dr, dx, dy, dz], axis=-1)
    qhat = q / norm
    return (dqhat - qhat * np.sum(qhat * dqhat, axis=-1, keepdims=True)) / norm


def orthonormalize_frame(t_u: np.ndarray, t_v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt on a tangent pair; a no-op (to rounding) on an already orthonormal pair."""
    t_u = np.asarray(t_u, dtype=np.float64)
    t_v = np.asarray(t_v, dtype=np.float64)
    u = t_u / np.linalg.norm(t_u, axis=-1, keepdims=True)
    v = t_v - np.sum(t_v * u, axis=-1, keepdims=True) * u
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    return u, v


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Inverse of quaternion_to_matrix for a single proper rotation, w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q if q[0] >= 0 else -q


@dataclass(frozen=True)
class GaussianPrimitive:
    """One 2D Gaussian disk, the per-element view of a GaussianSet."""

    centroid: np.ndarray
    quaternion: np.ndarray
    log_scales: np.ndarray
    opacity_logit: float
    appearance_seed: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        return quaternion_to_matrix(self.quaternion)

    @property
    def tangent_u(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def tangent_v(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def normal(self) -> np.ndarray:
        return self.rotation[:, 2]

    @property
    def scale_u(self) -> float:
        return float(np.exp(self.log_scales[0]))

    @property
    def scale_v(self) -> float:
        return float(np.exp(self.log_scales[1]))

    @property
    def opacity(self) -> float:
        return float(logistic(self.opacity_logit))


@dataclass
class GaussianSet:
    """Struct-of-arrays storage for N primitives.

    Rotations are raw (w, x, y, z) quaternions, scales are log-scales and
    opacities are logits, so any optimizer step leaves the derived
    quantities valid.
    """

    centroids: np.ndarray
    quaternions: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    appearance_seeds: np.ndarray

    PARAM_FIELDS = ("centroids", "quaternions", "log_scales", "opacity_logits", "appearance_seeds")

    def __post_init__(self):
        n = len(self.centroids)
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(n, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 2)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.appearance_seeds = np.asarray(self.appearance_seeds, dtype=np.float64).reshape(n, 3)

    @classmethod
    def empty(cls) -> GaussianSet:
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def from_primitives(cls, prims) -> GaussianSet:
        prims = list(prims)
        if not prims:
            return cls.empty()
        return cls(
            np.array([p.centroid for p in prims]),
            np.array([p.quaternion for p in prims]),
            np.array([p.log_scales for p in prims]),
            np.array([p.opacity_logit for p in prims]),
            np.array([p.appearance_seed for p in prims]),
        )

    def __len__(self) -> int:
        return len(self.centroids)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            self.centroids[i].copy(),
            self.quaternions[i].copy(),
            self.log_scales[i].copy(),
            float(self.opacity_logits[i]),
            self.appearance_seeds[i].copy(),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def copy(self) -> GaussianSet:
        return GaussianSet(*(getattr(self, f).copy() for f in self.PARAM_FIELDS))

    def select(self, index) -> GaussianSet:
        return GaussianSet(*(getattr(self, f)[index] for f in self.PARAM_FIELDS))

    def concat(self, other: GaussianSet) -> GaussianSet:
        return GaussianSet(*(np.concatenate([getattr(self, f), getattr(other, f)]) for f in self.PARAM_FIELDS))

    @property
    def rotations(self) -> np.ndarray:
        return quaternion_to_matrix(self.quaternions)

    @property
    def normals(self) -> np.ndarray:
        return self.rotations[:, :, 2]

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return logistic(self.opacity_logits)


@dataclass
class Camera:
    """Pinhole camera, OpenCV axes (x right, y down, looking along +z).

    Pixel (row, col) has its center at image coordinates (col + 0.5, row + 0.5).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-6) or np.linalg.det(self.R) < 0:
            raise ValueError("world_to_camera rotation must be orthonormal with det +1")

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), *, width, height, fx, fy=None,
                cx=None, cy=None) -> Camera:
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(up, forward)) > 0.999:
            up = np.array([1.0, 0.0, 0.0]) if abs(forward[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls(width, height, fx, fx if fy is None else fy,
                   width / 2 if cx is None else cx, height / 2 if cy is None else cy,
                   R, -R @ eye)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.t

    def pixel_directions(self) -> np.ndarray:
        """(H, W, 3) world-space ray directions scaled so camera-space z is 1."""
        cols, rows = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        d_cam = np.stack([(cols - self.cx) / self.fx, (rows - self.cy) / self.fy, np.ones_like(cols)], -1)
        return d_cam @ self.R

    def ray(self, row: float, col: float) -> tuple[np.ndarray, np.ndarray]:
        d_cam = np.array([(col + 0.5 - self.cx) / self.fx, (row + 0.5 - self.cy) / self.fy, 1.0])
        return self.center, self.R.T @ d_cam

    def scaled(self, factor: int) -> Camera:
        """Same camera at `factor` times the resolution."""
        return Camera(self.width * factor, self.height * factor, self.fx * factor, self.fy * factor,
                      self.cx * factor, self.cy * factor, self.R, self.t)

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height, "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy, "R": self.R.reshape(-1).tolist(), "t": self.t.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> Camera:
        return cls(int(d["width"]), int(d["height"]), float(d["fx"]), float(d["fy"]), float(d["cx"]),
                   float(d["cy"]), np.array(d["R"], dtype=np.float64).reshape(3, 3), np.array(d["t"]))


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.vertex_normals is not None:
            self.vertex_normals = np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @property
    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def euler_characteristic(self) -> int:
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        n_verts = len(np.unique(self.triangles))
        return n_verts - n_edges + len(self.triangles)

    def is_watertight(self) -> bool:
        """Every edge shared by exactly two triangles."""
        if len(self.triangles) == 0:
            return False
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def largest_component(self) -> TriangleMesh:
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        if len(self.triangles) == 0:
            return self
        n = len(self.vertices)
        e = self.triangles[:, [0, 1, 1, 2]].reshape(-1, 2)
        adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
        tri_labels = labels[self.triangles[:, 0]]
        keep_label = np.bincount(tri_labels).argmax()
        tris = self.triangles[tri_labels == keep_label]
        used = np.unique(tris)
        remap = -np.ones(n, dtype=np.int64)
        remap[used] = np.arange(len(used))
        normals = None if self.vertex_normals is None else self.vertex_normals[used]
        return TriangleMesh(self.vertices[used], remap[tris], normals)
