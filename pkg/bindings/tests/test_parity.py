"""Parity of the bindings with the primary CLI, driven over a 100-mesh corpus."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import meshtok_bindings as mb
from meshtok_bindings import BoundHandle, b_detokenize, b_evaluate, b_tokenize


def _run_cli(args):
    proc = subprocess.run(
        [sys.executable, "-m", "meshtok.cli", *args], capture_output=True, text=True
    )
    return proc.returncode, proc.stdout, proc.stderr


def _write_corpus(root: Path, count: int, seed: int = 0, faces=(3, 9)):
    from meshtok import Mesh, write_obj

    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        n_v = int(rng.integers(6, 14))
        n_f = int(rng.integers(faces[0], faces[1]))
        # distinct indices per face so no mesh collapses away entirely
        face_ids = np.stack([rng.choice(n_v, size=3, replace=False) for _ in range(n_f)])
        mesh = Mesh(rng.uniform(-2, 2, size=(n_v, 3)), face_ids)
        path = root / f"mesh_{i:03d}.obj"
        path.write_bytes(write_obj(mesh))
        paths.append(path)
    return paths


def _parse(path: Path):
    from meshtok import parse_obj

    mesh = parse_obj(path.read_bytes(), source_id=path.stem)
    return mesh.vertices, mesh.faces


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("parity")
    paths = _write_corpus(root / "objs", count=100, seed=42)
    out = root / "shards"
    code, stdout, stderr = _run_cli(
        ["tokenize", "--input", str(root / "objs"), "--output", str(out), "--grid", "128"]
    )
    assert code == 0, stderr
    return root, paths, out


def test_tokenize_parity_100_meshes(corpus):
    from meshtok.dataset import read_manifest
    from meshtok.shards import ShardReader

    root, paths, out = corpus
    manifest = {r.id: r for r in read_manifest(out / "manifest.jsonl")}
    readers = {}
    handle = BoundHandle(grid_resolution=128)
    checked = 0
    for path in paths:
        record = manifest[path.stem]
        assert record.status == "packed"
        reader = readers.setdefault(record.shard, ShardReader(out / record.shard))
        cli_tokens = reader[record.index].tokens.tolist()
        vertices, faces = _parse(path)
        assert handle.tokenize(vertices, faces) == cli_tokens  # bit-exact
        checked += 1
    assert checked == 100


def test_single_triangle_matches_cli(tmp_path):
    from meshtok import Mesh, write_obj
    from meshtok.shards import ShardReader

    mesh = Mesh(
        np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        np.array([[0, 1, 2]]),
    )
    src = tmp_path / "objs"
    src.mkdir()
    (src / "tri.obj").write_bytes(write_obj(mesh))
    code, _, stderr = _run_cli(
        ["tokenize", "--input", str(src), "--output", str(tmp_path / "out"), "--grid", "128"]
    )
    assert code == 0, stderr
    cli_tokens = ShardReader(next((tmp_path / "out").glob("*.mxtk")))[0].tokens.tolist()
    vertices, faces = _parse(src / "tri.obj")
    tokens = b_tokenize(vertices, faces, grid_resolution=128)
    assert tokens == cli_tokens
    assert len(tokens) == 11


def test_round_trip_parity_with_cli(corpus, tmp_path):
    # tokenize -> detokenize through the bindings equals the CLI output bytes
    from meshtok import Mesh, write_obj

    root, paths, out = corpus
    shard = next(out.glob("*.mxtk"))
    handle = BoundHandle(grid_resolution=128)
    for index, path in enumerate(paths[:20]):
        obj_path = tmp_path / f"cli_{index}.obj"
        code, _, stderr = _run_cli(
            ["detokenize", "--shard", str(shard), "--index", str(index),
             "--output", str(obj_path)]
        )
        assert code == 0, stderr
        ids = handle.tokenize(*_parse(path))
        vertices, faces = handle.detokenize(ids)
        assert write_obj(Mesh(vertices, faces)) == obj_path.read_bytes()


def test_rejection_exception(tmp_path):
    rng = np.random.default_rng(1)
    vertices = rng.uniform(-1, 1, size=(60, 3))
    faces = rng.integers(0, 60, size=(40, 3))
    with pytest.raises(mb.EncodeError) as err:
        b_tokenize(vertices, faces, grid_resolution=128, max_faces=5)
    assert err.value.code == "encode"


def test_invalid_ids_structured_exception():
    with pytest.raises(mb.SequenceError) as err:
        b_detokenize([1, 2, 3], grid_resolution=128)
    assert err.value.code == "sequence"


def test_tokenize_deterministic(corpus):
    root, paths, out = corpus
    vertices, faces = _parse(paths[0])
    assert b_tokenize(vertices, faces) == b_tokenize(vertices, faces)


def test_evaluate_matches_cli_field_for_field(corpus, tmp_path):
    root, paths, out = corpus
    gen_dir = root / "objs"
    report_path = tmp_path / "report.json"
    code, _, stderr = _run_cli(
        ["eval", "--gen", str(gen_dir), "--ref", str(gen_dir), "--points", "64",
         "--seed", "3", "--out", str(report_path)]
    )
    assert code == 0, stderr
    cli_report = json.loads(report_path.read_text())

    meshes = [_parse(p) for p in paths]
    report = b_evaluate(meshes, meshes, n_points=64, seed=3)
    assert report == cli_report


def test_evaluate_identical_sets(corpus):
    root, paths, out = corpus
    meshes = [_parse(p) for p in paths[:5]]
    report = b_evaluate(meshes, [(v.copy(), f.copy()) for v, f in meshes], n_points=32)
    assert report["cov"] == 100.0
    assert report["mmd_x1000"] == 0.0
    assert report["jsd_x1000"] == 0.0


def test_load_shard_handle(corpus):
    root, paths, out = corpus
    handle = BoundHandle(grid_resolution=128)
    reader = handle.load_shard(next(out.glob("*.mxtk")))
    assert len(reader) == 100
    assert handle.load_shard(next(out.glob("*.mxtk"))) is reader  # cached
    with pytest.raises(mb.ShardError):
        BoundHandle(grid_resolution=64).load_shard(next(out.glob("*.mxtk")))
