"""Dense SDF grids and zero level-set extraction."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage import measure


@dataclass
class SdfGrid:
    values: np.ndarray  # (R, R, R), indexed [ix, iy, iz]
    lo: np.ndarray
    hi: np.ndarray

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.resolution - 1)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("non-finite vertex")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())


def bake_grid(sdf_fn, lo, hi, resolution: int = 128, chunk: int = 1 << 18) -> SdfGrid:
    """Sample ``sdf_fn`` ((N, 3) -> (N,)) at the corners of a regular grid."""
    if resolution < 8:
        raise ValueError("grid resolution must be >= 8")
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (3,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (3,)).copy()
    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(3)]
    values = np.empty(resolution ** 3)
    # slab order (x-major) keeps chunks contiguous and the result schedule independent
    gx, gy, gz = axes
    yz = np.stack(np.meshgrid(gy, gz, indexing="ij"), axis=-1).reshape(-1, 2)
    per = len(yz)
    slabs = max(1, chunk // per)
    for i0 in range(0, resolution, slabs):
        xs = gx[i0:i0 + slabs]
        pts = np.concatenate([np.repeat(xs, per)[:, None], np.tile(yz, (len(xs), 1))], axis=1)
        values[i0 * per:(i0 + len(xs)) * per] = np.asarray(sdf_fn(pts), dtype=np.float64)
    values = values.reshape(resolution, resolution, resolution)
    if not np.all(np.isfinite(values)):
        raise ValueError("SDF grid contains non-finite values")
    return SdfGrid(values=values, lo=lo, hi=hi)


def marching_cubes(grid: SdfGrid, iso: float = 0.0) -> TriangleMesh:
    """Classic 256-case marching cubes with linear edge interpolation.

    Zero-area triangles are dropped and unused vertices compacted away.
    """
    v = grid.values
    if not (np.any(v > iso) and np.any(v < iso)):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(v, level=iso, spacing=tuple(grid.spacing),
                                                method="lorensen")
    verts = verts + grid.lo
    mesh = TriangleMesh(verts, faces)
    keep = mesh.triangle_areas() > 1e-14
    faces = faces[keep]
    used, inverse = np.unique(faces, return_inverse=True)
    return TriangleMesh(verts[used], inverse.reshape(-1, 3))


def write_ply(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(mesh.vertices)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {len(mesh.faces)}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        np.savetxt(fh, mesh.vertices, fmt="%.7g")
        np.savetxt(fh, np.hstack([np.full((len(mesh.faces), 1), 3), mesh.faces]), fmt="%d")


def read_ply(path) -> TriangleMesh:
    """ASCII PLY with ``vertex`` (x y z first) and triangle/polygon ``face`` elements."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vert = n_face = 0
    i = 1
    while lines[i].strip() != "end_header":
        parts = lines[i].split()
        if parts[:2] == ["format", "binary_little_endian"] or parts[:2] == ["format", "binary_big_endian"]:
            raise ValueError(f"{path}: only ASCII PLY is supported")
        if parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
        i += 1
    body = lines[i + 1:]
    verts = np.array([[float(v) for v in ln.split()[:3]] for ln in body[:n_vert]]).reshape(-1, 3)
    faces = []
    for ln in body[n_vert:n_vert + n_face]:
        idx = [int(v) for v in ln.split()]
        poly = idx[1:1 + idx[0]]
        faces += [[poly[0], poly[k], poly[k + 1]] for k in range(1, len(poly) - 1)]
    return TriangleMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w") as fh:
        np.savetxt(fh, mesh.vertices, fmt="v %.7g %.7g %.7g")
        np.savetxt(fh, mesh.faces + 1, fmt="f %d %d %d")


def extract_mesh(sdf_fn, lo, hi, resolution: int = 128) -> TriangleMesh:
    return marching_cubes(bake_grid(sdf_fn, lo, hi, resolution))
