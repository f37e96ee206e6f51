"""Surface sampling and the Chamfer / normal-consistency metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..core.types import TriangleMesh


@dataclass
class SampledSurface:
    points: np.ndarray
    normals: np.ndarray
    source: str = "points"

    def __post_init__(self):
        self.points = np.asarray(self.points, np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, np.float64).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise ValueError("points and normals must have equal length")

    def __len__(self) -> int:
        return len(self.points)

    def scaled(self, s: float) -> SampledSurface:
        return SampledSurface(self.points * s, self.normals, self.source)


def _unit(v):
    return v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)


def sample_mesh(mesh: TriangleMesh, count: int = 100_000, seed: int = 0) -> SampledSurface:
    """Area-weighted uniform samples with barycentric-interpolated (or face) normals."""
    if len(mesh.triangles) == 0:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    face = rng.choice(len(areas), size=count, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.column_stack([1 - r1, r1 * (1 - r2), r1 * r2])
    tri = mesh.triangles[face]
    V = mesh.vertices
    pts = np.einsum("ki,kij->kj", bary, V[tri])
    if mesh.vertex_normals is not None:
        nrm = np.einsum("ki,kij->kj", bary, mesh.vertex_normals[tri])
        bad = np.linalg.norm(nrm, axis=1) < 1e-9
    else:
        bad = np.ones(count, dtype=bool)
        nrm = np.zeros((count, 3))
    if bad.any():
        t = tri[bad]
        nrm[bad] = np.cross(V[t[:, 1]] - V[t[:, 0]], V[t[:, 2]] - V[t[:, 0]])
    return SampledSurface(pts, _unit(nrm), "mesh")


def nearest(src: np.ndarray, dst: np.ndarray):
    dist, idx = cKDTree(dst).query(src, k=1)
    return dist, idx


def chamfer_distance(a: SampledSurface, b: SampledSurface) -> float:
    """0.5 * (mean nearest distance a->b + mean nearest distance b->a); not scaled."""
    dab, _ = nearest(a.points, b.points)
    dba, _ = nearest(b.points, a.points)
    return 0.5 * (dab.mean() + dba.mean())


def normal_consistency(a: SampledSurface, b: SampledSurface) -> float:
    """0.5 * (mean |n_a . n_nn(a in b)| + the symmetric term); orientation-free."""
    _, iab = nearest(a.points, b.points)
    _, iba = nearest(b.points, a.points)
    na, nb = _unit(a.normals), _unit(b.normals)
    ab = np.abs(np.sum(na * nb[iab], axis=1)).mean()
    ba = np.abs(np.sum(nb * na[iba], axis=1)).mean()
    return float(0.5 * (ab + ba))


def evaluate(a: SampledSurface, b: SampledSurface, seed: int = 0) -> dict:
    """Metric record: Chamfer distance x 1000, normal consistency, sample counts."""
    return {
        "cd_x1000": float(1000.0 * chamfer_distance(a, b)),
        "nc": normal_consistency(a, b),
        "counts": [len(a), len(b)],
        "seed": seed,
    }
