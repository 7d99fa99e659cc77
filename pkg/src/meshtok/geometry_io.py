"""Minimal OBJ ingestion and serialization.

Only ``v`` and ``f`` records are honored; normals, texture coordinates,
materials, groups and comments are skipped. Faces with more than three
vertices are fan-triangulated at parse time (or rejected when
``triangulate=False``), so a parsed :class:`Mesh` is always a triangle soup.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ObjParseError


@dataclass
class Mesh:
    """Continuous-coordinate triangle mesh: vertex positions + index triples."""

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64, 0-based
    source_id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self) -> None:
        """Raise ObjParseError if the mesh violates its invariants."""
        if self.faces.size == 0:
            raise ObjParseError("mesh has no faces")
        if not np.isfinite(self.vertices).all():
            raise ObjParseError("non-finite vertex coordinate")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ObjParseError("face index out of range")


def _parse_float(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ObjParseError(f"line {lineno}: non-numeric field {token!r}") from None
    if not np.isfinite(value):
        raise ObjParseError(f"line {lineno}: non-finite coordinate {token!r}")
    return value


def parse_obj(data: bytes | str, triangulate: bool = True, source_id: str | None = None) -> Mesh:
    """Parse the v/f subset of an OBJ byte stream into a Mesh.

    ``f`` entries may carry ``/``-suffixed attribute references, which are
    dropped. Indices are converted from OBJ's 1-based convention; 0 or an
    index beyond the vertex count is an error. Polygons with more than three
    vertices are fan-triangulated when ``triangulate`` is set, rejected
    otherwise.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ObjParseError(f"input is not UTF-8: {exc}") from None
    else:
        text = data

    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        record = parts[0]
        if record == "v":
            if len(parts) != 4:
                raise ObjParseError(f"line {lineno}: 'v' record needs 3 fields, got {len(parts) - 1}")
            vertices.append(
                (
                    _parse_float(parts[1], lineno),
                    _parse_float(parts[2], lineno),
                    _parse_float(parts[3], lineno),
                )
            )
        elif record == "f":
            if len(parts) < 4:
                raise ObjParseError(f"line {lineno}: 'f' record needs >= 3 vertices, got {len(parts) - 1}")
            idx = []
            for entry in parts[1:]:
                head = entry.split("/", 1)[0]
                try:
                    i = int(head)
                except ValueError:
                    raise ObjParseError(f"line {lineno}: non-numeric face index {entry!r}") from None
                if i < 1 or i > len(vertices):
                    raise ObjParseError(
                        f"line {lineno}: face index {i} out of range (have {len(vertices)} vertices)"
                    )
                idx.append(i - 1)
            if len(idx) == 3:
                faces.append((idx[0], idx[1], idx[2]))
            elif triangulate:
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
            else:
                raise ObjParseError(f"line {lineno}: {len(idx)}-gon face (triangulate disabled)")
        # every other record type is skipped

    if not faces:
        raise ObjParseError("no faces parsed")
    mesh = Mesh(np.array(vertices), np.array(faces), source_id=source_id)
    mesh.validate()
    return mesh


def write_obj(mesh: Mesh) -> bytes:
    """Serialize a Mesh deterministically: v records (6 decimals), then 1-based f records."""
    mesh.validate()
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces)
    return ("\n".join(lines) + "\n").encode("utf-8")
