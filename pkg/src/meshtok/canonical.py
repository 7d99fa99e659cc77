"""Unit-cube normalization, grid quantization, and canonical ordering.

The canonical form makes the mesh-to-sequence map unique: within each face
the vertex list is cyclically rotated (winding preserved) so the vertex with
the smallest (z, y, x) key comes first, degenerate and duplicate faces are
dropped, and faces are sorted by their per-vertex key tuples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMeshError, QuantizeRangeError
from .geometry_io import Mesh

RANGE_EPS = 1e-6  # tolerated overshoot outside [-0.5, +0.5] before quantize errors


@dataclass(frozen=True)
class GridSpec:
    """N lattice points per axis over the fixed value range [-0.5, +0.5]."""

    resolution: int = 128

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError(f"grid resolution must be >= 2, got {self.resolution}")


@dataclass(frozen=True)
class NormalizationTransform:
    """normalized = (v - center) * scale, with scale = 1 / longest bbox extent."""

    center: tuple[float, float, float]
    scale: float

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        return (np.asarray(vertices, dtype=np.float64) - np.array(self.center)) * self.scale

    def invert(self, vertices: np.ndarray) -> np.ndarray:
        return np.asarray(vertices, dtype=np.float64) / self.scale + np.array(self.center)


@dataclass
class QuantizedMesh:
    """Integer-grid mesh: per-face vertex coordinate triples in [0, N-1].

    ``faces`` holds one (k, 3) int32 array of (x, y, z) rows per face; k is 3
    for triangles, 4 for quads. ``canonical`` records whether the face order
    and per-face rotations are in canonical form.
    """

    faces: list[np.ndarray]
    grid: GridSpec
    canonical: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.faces = [np.asarray(f, dtype=np.int32).reshape(-1, 3) for f in self.faces]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def is_triangular(self) -> bool:
        return all(len(f) == 3 for f in self.faces)

    def face_array(self) -> np.ndarray:
        """Stack uniform-arity faces into one (n, k, 3) array."""
        arities = {len(f) for f in self.faces}
        if len(arities) != 1:
            raise ValueError("mixed-arity mesh has no uniform face array")
        return np.stack(self.faces) if self.faces else np.zeros((0, 3, 3), dtype=np.int32)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedMesh):
            return NotImplemented
        return (
            self.grid == other.grid
            and len(self.faces) == len(other.faces)
            and all(np.array_equal(a, b) for a, b in zip(self.faces, other.faces))
        )


def normalize(mesh: Mesh) -> tuple[Mesh, NormalizationTransform]:
    """Center the bounding box and scale by its longest extent into [-0.5, +0.5]^3."""
    if mesh.n_faces == 0:
        raise DegenerateMeshError("cannot normalize a mesh without faces")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise DegenerateMeshError("degenerate bounding box (all vertices coincide)")
    center = (lo + hi) / 2.0
    transform = NormalizationTransform(tuple(center.tolist()), 1.0 / extent)
    out = Mesh(transform.apply(mesh.vertices), mesh.faces.copy(), source_id=mesh.source_id)
    return out, transform


def quantize(mesh: Mesh, grid: GridSpec) -> QuantizedMesh:
    """Floor-bin normalized coordinates onto the N^3 lattice (non-canonical).

    Each component c maps to floor((c + 0.5) * N) clamped into [0, N-1].
    Coordinates outside [-0.5 - eps, +0.5 + eps] signal that the caller
    skipped :func:`normalize` and raise.
    """
    v = mesh.vertices
    if v.size and (v.min() < -0.5 - RANGE_EPS or v.max() > 0.5 + RANGE_EPS):
        raise QuantizeRangeError(
            f"coordinates outside [-0.5, +0.5] (min {v.min():.6g}, max {v.max():.6g}); normalize first"
        )
    n = grid.resolution
    bins = np.clip(np.floor((v + 0.5) * n), 0, n - 1).astype(np.int32)
    faces = [bins[face] for face in mesh.faces]
    return QuantizedMesh(faces, grid, canonical=False)


def dequantize(qmesh: QuantizedMesh, triangulate_quads: bool = True) -> Mesh:
    """Map lattice indices back to bin centers: i -> (i + 0.5)/N - 0.5.

    Quantize-dequantize is the identity on lattice indices. Quad faces are
    fan-triangulated (Mesh is triangle-only) unless the caller rejects them.
    """
    n = qmesh.grid.resolution
    vertices: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []
    index: dict[tuple[int, int, int], int] = {}
    for f in qmesh.faces:
        ids = []
        for row in f:
            key = (int(row[0]), int(row[1]), int(row[2]))
            if key not in index:
                index[key] = len(vertices)
                vertices.append((np.asarray(row, dtype=np.float64) + 0.5) / n - 0.5)
            ids.append(index[key])
        if len(ids) == 3:
            faces.append((ids[0], ids[1], ids[2]))
        elif triangulate_quads:
            for j in range(1, len(ids) - 1):
                faces.append((ids[0], ids[j], ids[j + 1]))
        else:
            raise ValueError(f"{len(ids)}-gon face cannot become a triangle Mesh")
    if not faces:
        raise DegenerateMeshError("quantized mesh has no faces")
    return Mesh(np.array(vertices), np.array(faces))


def _vertex_keys(face: np.ndarray) -> list[tuple[int, int, int]]:
    # sort key is (z, y, x), low to high
    return [(int(v[2]), int(v[1]), int(v[0])) for v in face]


def _rotate_min_first(face: np.ndarray) -> np.ndarray:
    keys = _vertex_keys(face)
    start = keys.index(min(keys))  # smallest rotation index among ties
    return np.roll(face, -start, axis=0)


def _canonicalize_generic(qmesh: QuantizedMesh) -> QuantizedMesh:
    rotated = []
    for face in qmesh.faces:
        if len({tuple(v) for v in face.tolist()}) < 3:
            continue  # collapsed under quantization
        rotated.append(_rotate_min_first(face))
    keyed = sorted(
        rotated,
        key=lambda f: (tuple(_vertex_keys(f)), tuple(tuple(int(c) for c in v) for v in f)),
    )
    out: list[np.ndarray] = []
    for face in keyed:
        if out and face.shape == out[-1].shape and np.array_equal(face, out[-1]):
            continue
        out.append(face)
    if not out:
        raise DegenerateMeshError("all faces degenerate after quantization")
    return QuantizedMesh(out, qmesh.grid, canonical=True)


def _canonicalize_triangles(faces: np.ndarray, grid: GridSpec) -> QuantizedMesh:
    # encode (z, y, x) keys as single integers for vectorized comparison
    n = np.int64(grid.resolution)
    f = faces.astype(np.int64)  # (m, 3, 3) with (x, y, z) rows
    keys = f[:, :, 2] * n * n + f[:, :, 1] * n + f[:, :, 0]  # (m, 3)

    distinct = (
        (keys[:, 0] != keys[:, 1]) & (keys[:, 1] != keys[:, 2]) & (keys[:, 0] != keys[:, 2])
    )
    f, keys = f[distinct], keys[distinct]
    if len(f) == 0:
        raise DegenerateMeshError("all faces degenerate after quantization")

    start = np.argmin(keys, axis=1)  # first occurrence = smallest rotation index
    rows = np.arange(len(f))[:, None]
    order = (start[:, None] + np.arange(3)[None, :]) % 3
    f = f[rows, order]
    keys = keys[rows, order]

    sort_idx = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    f, keys = f[sort_idx], keys[sort_idx]

    if len(f) > 1:
        dup = np.all(keys[1:] == keys[:-1], axis=1)
        keep = np.concatenate(([True], ~dup))
        f = f[keep]

    return QuantizedMesh(list(f.astype(np.int32)), grid, canonical=True)


def canonicalize(qmesh: QuantizedMesh) -> QuantizedMesh:
    """Rotate each face to its z-y-x-minimal vertex, dedupe, and sort faces.

    Rotations never reverse winding. Faces with fewer than three distinct
    vertices are dropped; exact duplicates keep one copy. Idempotent.
    """
    if qmesh.n_faces == 0:
        raise DegenerateMeshError("empty quantized mesh")
    if qmesh.is_triangular:
        return _canonicalize_triangles(np.stack(qmesh.faces), qmesh.grid)
    return _canonicalize_generic(qmesh)


def is_canonical(qmesh: QuantizedMesh) -> bool:
    """Check rotation-minimality per face and strictly increasing face keys."""
    prev = None
    for face in qmesh.faces:
        keys = _vertex_keys(face)
        if len(set(keys)) < 3:
            return False
        if keys[0] != min(keys):
            return False
        if prev is not None and tuple(keys) <= prev:
            return False
        prev = tuple(keys)
    return qmesh.n_faces > 0
