import numpy as np
import pytest
import torch

from meshtok import GridSpec, QuantizedMesh, Vocabulary, canonicalize, encode
from meshtok.model import CoordinateLM, ModelConfig

torch.set_num_threads(max(1, torch.get_num_threads()))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for status, flag in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            if getattr(report, "when", "call") != "call":
                continue
            if "test_acceptance.py" in report.nodeid:
                name = report.nodeid.split("::")[-1]
                lines.append((name, flag))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, flag in sorted(lines):
            terminalreporter.write_line(f"[{flag}] {name}")


def random_canonical_mesh(rng: np.random.Generator, n_faces: int, resolution: int = 128) -> QuantizedMesh:
    """A canonical mesh with at most n_faces faces (dedupe may shrink it)."""
    grid = GridSpec(resolution)
    while True:
        faces = rng.integers(0, resolution, size=(max(n_faces, 1) + 3, 3, 3)).astype(np.int32)
        try:
            mesh = canonicalize(QuantizedMesh(list(faces), grid))
        except Exception:
            continue
        if mesh.n_faces > n_faces:
            mesh = QuantizedMesh(mesh.faces[:n_faces], grid, canonical=True)
        if mesh.n_faces >= 1:
            return mesh


def mesh_with_exact_faces(n: int, resolution: int = 128) -> QuantizedMesh:
    """Deterministic canonical mesh with exactly n distinct non-degenerate faces."""
    faces = []
    for i in range(n):
        z = i % resolution
        y = (i // resolution) % resolution
        faces.append(
            np.array(
                [[0, y, z], [1, y, z], [0, (y + 1) % resolution, z]],
                dtype=np.int32,
            )
        )
    mesh = canonicalize(QuantizedMesh(faces, GridSpec(resolution)))
    assert mesh.n_faces == n
    return mesh


@pytest.fixture(scope="session")
def micro_vocab() -> Vocabulary:
    return Vocabulary(16)


@pytest.fixture(scope="session")
def micro_model(micro_vocab) -> CoordinateLM:
    config = ModelConfig(
        vocab_size=micro_vocab.size,
        d_model=32,
        d_ffn=64,
        n_layers=2,
        n_heads=2,
        context_length=256,
        seed=11,
    )
    return CoordinateLM(config)


def micro_sequences(micro_vocab, count: int = 4, seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        mesh = random_canonical_mesh(rng, int(rng.integers(1, 5)), resolution=micro_vocab.grid_resolution)
        out.append(encode(mesh, micro_vocab))
    return out
