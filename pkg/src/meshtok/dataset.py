"""Desk-scale data pipeline: gates, augmentation, shard packing, manifest.

Augmentations are materialized offline (sampled from Philox streams keyed by
mesh and copy index), so repacking the same inputs with the same seed yields
byte-identical shards and manifests.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec, shards
from .canonical import GridSpec, QuantizedMesh, canonicalize, normalize, quantize
from .errors import MeshtokError, PackError
from .geometry_io import Mesh, parse_obj
from .metrics import hausdorff, sample_points
from .rng import philox_stream

DEFAULT_MAX_FACES = 800
ROTATIONS = (0, 90, 180, 270)
SCALE_RANGE = (0.9, 1.1)


@dataclass(frozen=True)
class AugmentationParams:
    """Quarter-turn about the up (y) axis plus independent per-axis scaling."""

    rotation: int = 0
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.rotation not in ROTATIONS:
            raise ValueError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if len(self.scales) != 3 or any(not SCALE_RANGE[0] <= s <= SCALE_RANGE[1] for s in self.scales):
            raise ValueError(f"scales must be three values in {SCALE_RANGE}, got {self.scales}")


def random_augmentation(rng: np.random.Generator) -> AugmentationParams:
    rotation = ROTATIONS[int(rng.integers(0, len(ROTATIONS)))]
    scales = tuple(float(s) for s in rng.uniform(SCALE_RANGE[0], SCALE_RANGE[1], size=3))
    return AugmentationParams(rotation=rotation, scales=scales)


def augment(mesh: Mesh, params: AugmentationParams) -> Mesh:
    """Scale per axis, then rotate about y by the quarter-turn (exact, no trig)."""
    v = mesh.vertices * np.array(params.scales)
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    if params.rotation == 90:
        v = np.stack([z, y, -x], axis=1)
    elif params.rotation == 180:
        v = np.stack([-x, y, -z], axis=1)
    elif params.rotation == 270:
        v = np.stack([-z, y, x], axis=1)
    return Mesh(v, mesh.faces.copy(), source_id=mesh.source_id)


def face_count_gate(mesh: Mesh | QuantizedMesh, max_faces: int = DEFAULT_MAX_FACES) -> bool:
    """Accept meshes with at most max_faces faces (800 inclusive by default)."""
    return mesh.n_faces <= max_faces


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    distance: float
    threshold: float


def decimation_gate(
    original: Mesh,
    simplified: Mesh,
    threshold: float | None = None,
    n_samples: int = 2048,
    seed: int = 0,
) -> GateResult:
    """Accept a simplification when the sampled symmetric Hausdorff distance stays small.

    Both meshes are mapped with the original's normalization transform before
    sampling. The default threshold is 1% of the normalized original's
    bounding-box diagonal.
    """
    norm_orig, transform = normalize(original)
    mapped = Mesh(transform.apply(simplified.vertices), simplified.faces, source_id=simplified.source_id)
    if threshold is None:
        extents = norm_orig.vertices.max(axis=0) - norm_orig.vertices.min(axis=0)
        threshold = 0.01 * float(np.linalg.norm(extents))
    # same stream for both clouds: identical meshes sample identical points,
    # so an unchanged mesh measures exactly zero
    a = sample_points(norm_orig, n_samples, rng=philox_stream(seed, 0))
    b = sample_points(mapped, n_samples, rng=philox_stream(seed, 0))
    distance = hausdorff(a, b)
    return GateResult(accepted=distance <= threshold, distance=distance, threshold=threshold)


@dataclass
class ManifestRecord:
    id: str
    source: str
    n_faces: int
    dropped_faces: int
    rotation: int
    scales: tuple[float, float, float]
    split: str
    shard: str | None
    index: int | None
    status: str  # "packed" or "rejected:<code>"

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        data = json.loads(line)
        data["scales"] = tuple(data["scales"])
        return cls(**data)


def write_manifest(path, records: list[ManifestRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return [ManifestRecord.from_json(line) for line in fh if line.strip()]


@dataclass
class PackEntry:
    mesh_id: str
    qmesh: QuantizedMesh
    source: str = ""
    rotation: int = 0
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    split: str = "train"
    dropped_faces: int = 0


def pack(
    entries: list[PackEntry],
    vocab: codec.Vocabulary,
    out_dir,
    mode: str = codec.TRIANGLE,
    component_order: str = "xyz",
    max_faces: int = DEFAULT_MAX_FACES,
    shard_size: int = 4096,
    prefix: str = "shard",
) -> tuple[list[Path], list[ManifestRecord]]:
    """Encode canonical meshes into MXTK shards plus manifest rows in input order."""
    entries = list(entries)
    if not entries:
        raise PackError("nothing to pack")
    max_len = 2 + (12 + 2 if mode == codec.HYBRID else 9) * max_faces
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    sequences: list[codec.TokenSequence] = []
    for entry in entries:
        seq = codec.encode(
            entry.qmesh, vocab, mode=mode, component_order=component_order, max_faces=max_faces
        )
        if len(seq) > max_len:
            raise PackError(f"{entry.mesh_id}: sequence length {len(seq)} exceeds {max_len}")
        sequences.append(seq)

    paths: list[Path] = []
    records: list[ManifestRecord] = []
    for start in range(0, len(sequences), shard_size):
        shard_path = out_dir / f"{prefix}-{len(paths):05d}.mxtk"
        chunk = sequences[start : start + shard_size]
        shards.write_shard(shard_path, chunk, vocab, mode=mode)
        for offset, entry in enumerate(entries[start : start + shard_size]):
            records.append(
                ManifestRecord(
                    id=entry.mesh_id,
                    source=entry.source,
                    n_faces=entry.qmesh.n_faces,
                    dropped_faces=entry.dropped_faces,
                    rotation=entry.rotation,
                    scales=tuple(entry.scales),
                    split=entry.split,
                    shard=shard_path.name,
                    index=offset,
                    status="packed",
                )
            )
        paths.append(shard_path)
    return paths, records


@dataclass
class PipelineResult:
    shard_paths: list[Path]
    manifest: list[ManifestRecord]
    n_packed: int
    n_rejected: int
    failures: list[str] = field(default_factory=list)


def tokenize_corpus(
    obj_paths,
    out_dir,
    grid: GridSpec = GridSpec(128),
    max_faces: int = DEFAULT_MAX_FACES,
    augment_copies: int = 0,
    seed: int = 0,
    mode: str = codec.TRIANGLE,
    component_order: str = "xyz",
    val_fraction: float = 0.0,
    shard_size: int = 4096,
) -> PipelineResult:
    """parse -> (augment xk) -> normalize -> quantize -> canonicalize -> gate -> pack.

    Per-file failures are recorded and skipped; the run continues. Copy j of
    mesh i draws its augmentation from Philox stream (seed, i * 1000 + j).
    """
    vocab = codec.Vocabulary(grid.resolution)
    entries: list[PackEntry] = []
    rejected: list[ManifestRecord] = []
    order: list[tuple[str, ManifestRecord | None]] = []  # (kind, rejected record) per attempt
    failures: list[str] = []

    for mesh_index, path in enumerate(sorted(str(p) for p in obj_paths)):
        name = Path(path).stem
        try:
            with open(path, "rb") as fh:
                base = parse_obj(fh.read(), source_id=name)
        except MeshtokError as exc:
            failures.append(f"{path}: [{exc.code}] {exc}")
            continue
        for copy in range(augment_copies + 1):
            params = AugmentationParams()
            if copy > 0:
                params = random_augmentation(philox_stream(seed, mesh_index * 1000 + copy))
            mesh_id = name if copy == 0 else f"{name}.aug{copy}"
            split = "val" if val_fraction > 0 and _val_hash(mesh_id, seed) < val_fraction else "train"
            try:
                mesh = augment(base, params) if copy > 0 else base
                mesh, _ = normalize(mesh)
                qmesh = canonicalize(quantize(mesh, grid))
            except MeshtokError as exc:
                failures.append(f"{mesh_id}: [{exc.code}] {exc}")
                continue
            dropped = base.n_faces - qmesh.n_faces
            if not face_count_gate(qmesh, max_faces):
                rejected.append(
                    ManifestRecord(
                        id=mesh_id,
                        source=path,
                        n_faces=qmesh.n_faces,
                        dropped_faces=dropped,
                        rotation=params.rotation,
                        scales=params.scales,
                        split=split,
                        shard=None,
                        index=None,
                        status="rejected:face-count",
                    )
                )
                order.append(("rejected", rejected[-1]))
                continue
            entries.append(
                PackEntry(
                    mesh_id=mesh_id,
                    qmesh=qmesh,
                    source=path,
                    rotation=params.rotation,
                    scales=params.scales,
                    split=split,
                    dropped_faces=dropped,
                )
            )
            order.append(("packed", None))

    if not entries:
        raise PackError(f"no meshes accepted ({len(failures)} failures, {len(rejected)} rejected)")

    shard_paths, packed_records = pack(
        entries,
        vocab,
        out_dir,
        mode=mode,
        component_order=component_order,
        max_faces=max_faces,
        shard_size=shard_size,
    )

    packed_iter = iter(packed_records)
    manifest = [rec if kind == "rejected" else next(packed_iter) for kind, rec in order]
    write_manifest(Path(out_dir) / "manifest.jsonl", manifest)
    return PipelineResult(
        shard_paths=shard_paths,
        manifest=manifest,
        n_packed=len(packed_records),
        n_rejected=len(rejected),
        failures=failures,
    )


def _val_hash(mesh_id: str, seed: int) -> float:
    """Deterministic (id, seed) -> [0, 1) fraction for split assignment."""
    import hashlib

    digest = hashlib.sha256(f"{seed}:{mesh_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") / 2**64
