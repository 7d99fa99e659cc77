"""Thin bindings over the meshtok core for external training loops.

Every call delegates to the core package; nothing is reimplemented, so
token streams are bit-identical to the CLI's and metric floats come from
the same kernels in the same reduction order. Errors are the core's
exception types with their stable ``code`` attributes.

Handles hold the vocabulary/grid configuration and any loaded shards; they
are cheap to create and must not be shared across threads (the core's
compiled kernel releases the GIL while it runs, the handle itself is not
synchronized).
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from meshtok import (
    GridSpec,
    Mesh,
    Vocabulary,
    canonicalize,
    decode,
    dequantize,
    encode,
    normalize,
    quantize,
)
from meshtok.dataset import face_count_gate
from meshtok.errors import (  # re-exported so callers can match codes
    DegenerateMeshError,
    EncodeError,
    EvalError,
    MeshtokError,
    ObjParseError,
    PackError,
    QuantizeRangeError,
    SequenceError,
    ShardError,
)
from meshtok.metrics import evaluate as _evaluate
from meshtok.shards import ShardReader

__all__ = [
    "BoundHandle",
    "b_tokenize",
    "b_detokenize",
    "b_evaluate",
    "MeshtokError",
    "ObjParseError",
    "DegenerateMeshError",
    "QuantizeRangeError",
    "EncodeError",
    "SequenceError",
    "ShardError",
    "PackError",
    "EvalError",
]

__version__ = "0.1.0"


class BoundHandle:
    """Configuration plus loaded shards for repeated tokenize/detokenize calls."""

    def __init__(
        self,
        grid_resolution: int = 128,
        max_faces: int = 800,
        mode: str = "triangle",
        component_order: str = "xyz",
    ):
        self.grid = GridSpec(grid_resolution)
        self.vocabulary = Vocabulary(grid_resolution)
        self.max_faces = max_faces
        self.mode = mode
        self.component_order = component_order
        self._shards: dict[str, ShardReader] = {}

    def tokenize(self, vertices, faces) -> list[int]:
        """normalize -> quantize -> canonicalize -> encode, one mesh.

        Matches `meshtok tokenize` bit for bit on the same input. Meshes
        whose canonical face count exceeds max_faces raise EncodeError, the
        same rejection the pipeline records.
        """
        mesh = Mesh(np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64))
        mesh.validate()
        normalized, _ = normalize(mesh)
        qmesh = canonicalize(quantize(normalized, self.grid))
        if not face_count_gate(qmesh, self.max_faces):
            raise EncodeError(f"{qmesh.n_faces} faces exceeds max_faces={self.max_faces}")
        seq = encode(
            qmesh,
            self.vocabulary,
            mode=self.mode,
            component_order=self.component_order,
            max_faces=self.max_faces,
        )
        return [int(t) for t in seq.tokens]

    def detokenize(self, ids) -> tuple[np.ndarray, np.ndarray]:
        """Strict decode to (vertices, faces) in normalized coordinates."""
        qmesh = decode(
            np.asarray(ids, dtype=np.int64),
            self.vocabulary,
            strict=True,
            mode=self.mode,
            component_order=self.component_order,
        )
        mesh = dequantize(qmesh)
        return mesh.vertices, mesh.faces

    def evaluate(self, gen, ref, n_points: int = 2048, seed: int = 0, jsd_grid: int = 28) -> dict:
        """Metric suite over two sets of (vertices, faces) pairs.

        Same core as `meshtok eval`: identical streams, kernels, and
        reduction order, so the report matches the CLI field for field.
        """
        report = _evaluate(
            [Mesh(np.asarray(v, dtype=np.float64), np.asarray(f, dtype=np.int64)) for v, f in gen],
            [Mesh(np.asarray(v, dtype=np.float64), np.asarray(f, dtype=np.int64)) for v, f in ref],
            n_points=n_points,
            seed=seed,
            jsd_grid=jsd_grid,
        )
        return asdict(report)

    def load_shard(self, path) -> ShardReader:
        """Open (and cache) a shard for random access to its sequences."""
        key = str(path)
        if key not in self._shards:
            reader = ShardReader(key)
            if reader.grid_resolution != self.grid.resolution:
                raise ShardError(
                    f"{key}: shard grid {reader.grid_resolution} != handle grid {self.grid.resolution}"
                )
            self._shards[key] = reader
        return self._shards[key]


def b_tokenize(vertices, faces, grid_resolution: int = 128, max_faces: int = 800) -> list[int]:
    return BoundHandle(grid_resolution, max_faces).tokenize(vertices, faces)


def b_detokenize(ids, grid_resolution: int = 128) -> tuple[np.ndarray, np.ndarray]:
    return BoundHandle(grid_resolution).detokenize(ids)


def b_evaluate(gen, ref, grid_resolution: int = 128, **params) -> dict:
    return BoundHandle(grid_resolution).evaluate(gen, ref, **params)
