"""Checkpoint, PLY, camera, PNG and PFM serialization."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .types import Camera, GaussianSet, TriangleMesh

MAGIC = b"GSRF"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(Exception):
    pass


class PlyError(Exception):
    pass


@dataclass
class Checkpoint:
    gaussians: GaussianSet
    sdf_params: np.ndarray
    app_params: np.ndarray
    iteration: int
    metadata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, gaussians: GaussianSet, sdf_params, app_params, iteration: int,
                    metadata: dict | None = None, extra: dict | None = None) -> None:
    """Write a GSRF checkpoint.

    Layout: magic, u32 version, u32-length-prefixed JSON header, u32 array
    count, then per array: u16 name length + name, u8 dtype code, u8 ndim,
    u32 dims, u64 element count, raw little-endian data.
    """
    arrays = {f"gaussians.{name}": getattr(gaussians, name) for name in GaussianSet.PARAM_FIELDS}
    arrays["sdf_params"] = np.asarray(sdf_params)
    arrays["app_params"] = np.asarray(app_params)
    for k, v in (extra or {}).items():
        arrays[f"extra.{k}"] = np.asarray(v)
    header = json.dumps({"iteration": int(iteration), "metadata": metadata or {}}).encode()

    chunks = [MAGIC, struct.pack("<II", VERSION, len(header)), header, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name}")
        code = _DTYPE_CODES[arr.dtype]
        bname = name.encode()
        chunks.append(struct.pack("<H", len(bname)) + bname)
        chunks.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(struct.pack("<Q", arr.size))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("unexpected end of file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a GSRF checkpoint")
    version, header_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is not supported (expected {VERSION})")
    header = json.loads(r.take(header_len).decode())
    (n_arrays,) = r.unpack("<I")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        (count,) = r.unpack("<Q")
        if count != int(np.prod(shape)):
            raise CheckpointError(f"{path}: array {name} length prefix does not match its shape")
        dt = _DTYPES[code]
        arrays[name] = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    gaussians = GaussianSet(*(arrays[f"gaussians.{name}"] for name in GaussianSet.PARAM_FIELDS))
    extra = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    return Checkpoint(gaussians, arrays["sdf_params"], arrays["app_params"], header["iteration"],
                      header.get("metadata", {}), extra)


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def export_mesh_ply(mesh: TriangleMesh, path, binary: bool = False) -> None:
    v = mesh.vertices
    n = mesh.vertex_normals
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(v)}", "property float x", "property float y", "property float z"]
    if n is not None:
        header += ["property float nx", "property float ny", "property float nz"]
    header += [f"element face {len(mesh.triangles)}", "property list uchar int vertex_indices", "end_header"]
    cols = v if n is None else np.hstack([v, n])
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        if binary:
            fh.write(cols.astype("<f4").tobytes())
            faces = np.zeros(len(mesh.triangles), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            faces["n"] = 3
            faces["idx"] = mesh.triangles
            fh.write(faces.tobytes())
        else:
            for row in cols:
                fh.write((" ".join(f"{x:.9g}" for x in row) + "\n").encode())
            for tri in mesh.triangles:
                fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n".encode())


def export_pointcloud_ply(path, points, normals=None) -> None:
    export_mesh_ply(TriangleMesh(points, np.zeros((0, 3), dtype=np.int64), normals), path)


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, count_dtype, item_dtype)


def _parse_header(fh) -> tuple[str, list[_Element]]:
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyError(f"line 1: expected 'ply', got {first.strip()!r}")
    fmt = None
    elements: list[_Element] = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyError(f"line {lineno}: end of file inside header")
        line = raw.decode("ascii", errors="replace").strip()
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        try:
            if parts[0] == "format":
                if parts[1] not in ("ascii", "binary_little_endian"):
                    raise PlyError(f"line {lineno}: unsupported format {parts[1]!r}: {line!r}")
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append(_Element(parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if not elements:
                    raise PlyError(f"line {lineno}: property before any element: {line!r}")
                if parts[1] == "list":
                    elements[-1].props.append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
                else:
                    elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise PlyError(f"line {lineno}: unrecognized header line {line!r}")
        except (IndexError, KeyError, ValueError) as exc:
            raise PlyError(f"line {lineno}: malformed header line {line!r}") from exc
    if fmt is None:
        raise PlyError("header has no format line")
    return fmt, elements


def _read_binary_element(fh, el: _Element) -> dict:
    if all(len(p) == 2 for p in el.props):
        dt = np.dtype([(p[0], "<" + p[1]) for p in el.props])
        buf = fh.read(dt.itemsize * el.count)
        if len(buf) < dt.itemsize * el.count:
            raise PlyError(f"unexpected end of file in element {el.name!r}")
        rec = np.frombuffer(buf, dtype=dt)
        return {p[0]: rec[p[0]].astype(np.float64) for p in el.props}
    out = {p[0]: [] for p in el.props}
    for _ in range(el.count):
        for p in el.props:
            if len(p) == 2:
                size = np.dtype(p[1]).itemsize
                out[p[0]].append(np.frombuffer(fh.read(size), dtype="<" + p[1])[0])
            else:
                csize = np.dtype(p[1]).itemsize
                b = fh.read(csize)
                if len(b) < csize:
                    raise PlyError(f"unexpected end of file in element {el.name!r}")
                n = int(np.frombuffer(b, dtype="<" + p[1])[0])
                isize = np.dtype(p[2]).itemsize
                items = np.frombuffer(fh.read(isize * n), dtype="<" + p[2])
                if len(items) < n:
                    raise PlyError(f"unexpected end of file in element {el.name!r}")
                out[p[0]].append(items.astype(np.int64))
    return out


def _read_ascii_element(fh, el: _Element) -> dict:
    out = {p[0]: [] for p in el.props}
    for _ in range(el.count):
        line = fh.readline()
        if not line:
            raise PlyError(f"unexpected end of file in element {el.name!r}")
        tok = line.split()
        pos = 0
        try:
            for p in el.props:
                if len(p) == 2:
                    out[p[0]].append(float(tok[pos]))
                    pos += 1
                else:
                    n = int(tok[pos])
                    out[p[0]].append(np.array([int(t) for t in tok[pos + 1:pos + 1 + n]], dtype=np.int64))
                    if len(out[p[0]][-1]) != n:
                        raise IndexError
                    pos += 1 + n
        except (IndexError, ValueError) as exc:
            raise PlyError(f"malformed {el.name!r} record: {line.strip()!r}") from exc
    return out


def _read_ply(path) -> dict:
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        data = {}
        for el in elements:
            data[el.name] = (_read_binary_element if fmt == "binary_little_endian" else _read_ascii_element)(fh, el)
    return data


def _vertices_normals(data: dict):
    v = data.get("vertex")
    if v is None or any(k not in v for k in "xyz"):
        raise PlyError("PLY has no vertex x/y/z properties")
    pts = np.stack([np.asarray(v[k], dtype=np.float64) for k in "xyz"], axis=1).reshape(-1, 3)
    normals = None
    if all(k in v for k in ("nx", "ny", "nz")):
        normals = np.stack([np.asarray(v[k], dtype=np.float64) for k in ("nx", "ny", "nz")], axis=1).reshape(-1, 3)
    return pts, normals


def _faces(data: dict, n_vertices: int) -> np.ndarray:
    face = data.get("face")
    if not face:
        return np.zeros((0, 3), dtype=np.int64)
    key = "vertex_indices" if "vertex_indices" in face else "vertex_index"
    tris = []
    for poly in face[key]:
        poly = np.asarray(poly, dtype=np.int64)
        if len(poly) and (poly.min() < 0 or poly.max() >= n_vertices):
            raise PlyError(f"face index out of range: {poly.tolist()} with {n_vertices} vertices")
        for k in range(1, len(poly) - 1):  # fan-triangulate polygons
            tris.append((poly[0], poly[k], poly[k + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None

    @property
    def has_normals(self) -> bool:
        return self.normals is not None


def import_pointcloud_ply(path) -> PointCloud:
    """Vertices (and normals when present) of any PLY; faces are validated but dropped."""
    data = _read_ply(path)
    pts, normals = _vertices_normals(data)
    _faces(data, len(pts))
    return PointCloud(pts, normals)


def import_mesh_ply(path) -> TriangleMesh:
    data = _read_ply(path)
    pts, normals = _vertices_normals(data)
    return TriangleMesh(pts, _faces(data, len(pts)), normals)


# ---------------------------------------------------------------- cameras and images

def save_cameras(path, cameras: list[Camera]) -> None:
    Path(path).write_text(json.dumps([c.to_json() for c in cameras], indent=1))


def load_cameras(path) -> list[Camera]:
    return [Camera.from_json(d) for d in json.loads(Path(path).read_text())]


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


def read_png(path) -> np.ndarray:
    from PIL import Image

    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[..., :3]
    return arr


def write_pfm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype="<f4")
    if img.ndim == 2:
        tag, h, w = b"Pf", *img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        tag, h, w = b"PF", img.shape[0], img.shape[1]
    else:
        raise ValueError("PFM images must be HxW or HxWx3")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        channels = 3 if tag == b"PF" else 1
        dt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dt, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)
