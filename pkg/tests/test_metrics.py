import math

import numpy as np
import pytest

from meshtok import (
    Mesh,
    PointCloud,
    chamfer,
    cov,
    evaluate,
    hausdorff,
    jsd,
    mmd,
    one_nna,
    pairwise_chamfer,
    sample_points,
)
from meshtok._kernels import _nn_py
from meshtok._kernels import nn_sqdists
from meshtok.errors import EvalError
from meshtok.metrics import voxel_histogram


# --- brute-force oracles (independent of the library paths) ------------------

def brute_chamfer(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return d2.min(axis=1).mean() + d2.min(axis=0).mean()


def brute_hausdorff(a, b):
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def brute_mmd(gen, ref):
    return np.mean([min(brute_chamfer(r, g) for g in gen) for r in ref])


def brute_cov(gen, ref):
    matched = set()
    for g in gen:
        dists = [brute_chamfer(g, r) for r in ref]
        matched.add(int(np.argmin(dists)))
    return 100.0 * len(matched) / len(ref)


def brute_one_nna(gen, ref):
    clouds = list(gen) + list(ref)
    labels = [0] * len(gen) + [1] * len(ref)
    correct = 0
    for i, cloud in enumerate(clouds):
        best, best_d = None, None
        for j, other in enumerate(clouds):
            if i == j:
                continue
            d = brute_chamfer(cloud, other)
            if best_d is None or d < best_d:  # tie -> lower index wins
                best, best_d = j, d
        correct += labels[best] == labels[i]
    return 100.0 * correct / len(clouds)


def _clouds(rng, count, points=12):
    return [rng.normal(size=(points, 3)) for _ in range(count)]


# --- oracle equivalence -------------------------------------------------------

def test_chamfer_matches_brute_force_exactly():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=(50, 3)), rng.normal(size=(37, 3))
        assert chamfer(a, b) == brute_chamfer(a, b)


def test_hausdorff_matches_brute_force_exactly():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.normal(size=(31, 3)), rng.normal(size=(44, 3))
        assert hausdorff(a, b) == brute_hausdorff(a, b)


def test_set_metrics_match_brute_force_exactly():
    rng = np.random.default_rng(2)
    gen, ref = _clouds(rng, 6), _clouds(rng, 5)
    assert mmd(gen, ref) == brute_mmd(gen, ref)
    assert cov(gen, ref) == brute_cov(gen, ref)
    assert one_nna(gen, ref) == brute_one_nna(gen, ref)


def test_kernel_backends_agree_bitwise():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(64, 3)), rng.normal(size=(48, 3))
    assert np.array_equal(nn_sqdists(a, b), _nn_py.nn_sqdists(a, b))


# --- pointwise examples -------------------------------------------------------

def test_chamfer_examples():
    assert chamfer(np.zeros((5, 3)), np.zeros((5, 3))) == 0.0
    a, b = np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])
    assert chamfer(a, b) == 2.0  # one squared unit each direction
    assert chamfer(a, b) == chamfer(b, a)


def test_hausdorff_examples():
    assert hausdorff(np.zeros((3, 3)), np.zeros((2, 3))) == 0.0
    a, b = np.array([[0.0, 0, 0]]), np.array([[3.0, 0, 0]])
    assert hausdorff(a, b) == 3.0


def test_mmd_cov_trivial():
    rng = np.random.default_rng(4)
    ref = _clouds(rng, 4)
    gen = [r.copy() for r in ref] + _clouds(rng, 2)
    assert mmd(gen, ref) == 0.0
    assert cov(gen, ref) == 100.0

    near_one = [ref[0] + 1e-9, ref[0] + 2e-9, ref[0] + 3e-9]
    assert cov(near_one, ref) == pytest.approx(100.0 / 4)


def test_one_nna_trivial():
    rng = np.random.default_rng(5)
    gen = [rng.normal(size=(8, 3)) for _ in range(4)]
    ref = [rng.normal(size=(8, 3)) + 100.0 for _ in range(4)]
    assert one_nna(gen, ref) == 100.0  # far-separated clusters

    a, b = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    assert one_nna([a], [b]) == 0.0  # the only neighbor is the other set


def test_one_nna_same_distribution_near_50():
    rng = np.random.default_rng(6)
    values = []
    for _ in range(20):
        gen = [rng.normal(size=(16, 3)) for _ in range(8)]
        ref = [rng.normal(size=(16, 3)) for _ in range(8)]
        values.append(one_nna(gen, ref))
    assert 40.0 <= np.mean(values) <= 60.0


# --- JSD -----------------------------------------------------------------------

def brute_jsd(p, q):
    # direct summation from the definition, for histogram distributions
    m = 0.5 * (p + q)
    total = 0.0
    for pi, qi, mi in zip(p, q, m):
        if pi > 0:
            total += 0.5 * pi * math.log(pi / mi)
        if qi > 0:
            total += 0.5 * qi * math.log(qi / mi)
    return total


def test_jsd_identical_is_zero():
    rng = np.random.default_rng(7)
    clouds = [rng.uniform(-0.5, 0.5, size=(64, 3)) for _ in range(3)]
    assert jsd(clouds, [c.copy() for c in clouds]) == 0.0


def test_jsd_disjoint_supports_is_ln2():
    a = [np.full((32, 3), -0.4)]
    b = [np.full((32, 3), 0.4)]
    assert jsd(a, b) == pytest.approx(math.log(2), abs=1e-5)


def test_jsd_symmetry_and_bounds():
    rng = np.random.default_rng(8)
    a = [rng.uniform(-0.5, 0.5, size=(50, 3))]
    b = [rng.uniform(-0.5, 0.5, size=(50, 3))]
    v = jsd(a, b)
    assert v == jsd(b, a)
    assert 0.0 <= v <= math.log(2)


def test_jsd_matches_direct_summation():
    rng = np.random.default_rng(9)
    grid = 6
    a = [rng.uniform(-0.5, 0.5, size=(200, 3))]
    b = [rng.uniform(-0.5, 0.5, size=(200, 3))]
    ha = voxel_histogram(np.concatenate(a), grid)
    hb = voxel_histogram(np.concatenate(b), grid)
    eps = 1e-12
    p = (ha + eps) / (ha.sum() + eps * ha.size)
    q = (hb + eps) / (hb.sum() + eps * hb.size)
    assert jsd(a, b, grid=grid) == pytest.approx(brute_jsd(p, q), abs=1e-12)


# --- surface sampling ----------------------------------------------------------

def _triangle_mesh():
    return Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))


def test_sample_points_on_plane():
    cloud = sample_points(_triangle_mesh(), 500, seed=0)
    assert np.abs(cloud.points[:, 2]).max() < 1e-9  # z = 0 plane
    # inside the triangle: x, y >= 0 and x + y <= 1
    assert (cloud.points[:, :2] >= -1e-12).all()
    assert (cloud.points[:, 0] + cloud.points[:, 1] <= 1 + 1e-12).all()


def test_sample_points_area_weighting():
    # two equal-area triangles: per-face counts within 5 sigma of P/2
    vertices = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]])
    mesh = Mesh(vertices, np.array([[0, 1, 2], [3, 4, 5]]))
    cloud = sample_points(mesh, 10_000, seed=1)
    first = int((cloud.points[:, 0] < 5).sum())
    sigma = math.sqrt(10_000 * 0.25)
    assert abs(first - 5_000) <= 5 * sigma


def test_sample_points_deterministic():
    a = sample_points(_triangle_mesh(), 100, seed=7)
    b = sample_points(_triangle_mesh(), 100, seed=7)
    assert np.array_equal(a.points, b.points)
    c = sample_points(_triangle_mesh(), 100, seed=8)
    assert not np.array_equal(a.points, c.points)


def test_sample_points_zero_area():
    mesh = Mesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(EvalError):
        sample_points(mesh, 10)


# --- evaluate ------------------------------------------------------------------

def _cube(offset=0.0, scale=(1.0, 1.0, 1.0)):
    v = np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4], [2, 3, 7], [2, 7, 6],
            [1, 2, 6], [1, 6, 5], [3, 0, 4], [3, 4, 7],
        ]
    )
    return Mesh(v * np.asarray(scale) + offset, f)


def test_evaluate_identical_sets(tmp_path):
    # distinct aspect ratios so the shapes stay distinct after normalization
    meshes = [_cube(), _cube(scale=(1, 0.5, 0.25)), _cube(scale=(0.3, 1, 0.7))]
    report = evaluate(meshes, [  # fresh copies, same geometry
        Mesh(m.vertices.copy(), m.faces.copy()) for m in meshes
    ], n_points=64, seed=0, matrix_path=str(tmp_path / "dist.f32"))
    assert report.cov == 100.0
    assert report.mmd_x1000 == 0.0
    assert report.jsd_x1000 == 0.0
    assert (tmp_path / "dist.f32").exists() and (tmp_path / "dist.f32.json").exists()


def test_evaluate_empty_errors():
    with pytest.raises(EvalError):
        evaluate([], [_cube()], n_points=16)


def test_evaluate_deterministic():
    gen = [_cube(), _cube(offset=0.2)]
    ref = [_cube(scale=(1.5, 1.0, 0.5))]
    a = evaluate(gen, ref, n_points=32, seed=3)
    b = evaluate(gen, ref, n_points=32, seed=3)
    assert a.to_json() == b.to_json()


def test_evaluate_excludes_degenerate():
    bad = Mesh(np.zeros((3, 3)), np.array([[0, 1, 2]]), source_id="flat")
    report = evaluate([_cube(), bad], [_cube()], n_points=32, seed=0)
    assert report.n_gen == 1
    assert any("flat" in item for item in report.excluded_gen)


def test_translation_increases_mmd_monotonically():
    rng = np.random.default_rng(10)
    ref = [rng.uniform(-0.5, 0.5, size=(32, 3)) for _ in range(3)]
    gen = [rng.uniform(-0.5, 0.5, size=(32, 3)) for _ in range(3)]
    base = mmd(gen, ref)
    d1 = mmd([g + 5.0 for g in gen], ref)
    d2 = mmd([g + 9.0 for g in gen], ref)
    assert base < d1 < d2


def test_pairwise_chamfer_shape_and_symmetry():
    rng = np.random.default_rng(11)
    gen, ref = _clouds(rng, 3), _clouds(rng, 4)
    m = pairwise_chamfer(gen, ref)
    assert m.shape == (3, 4)
    for i in range(3):
        for j in range(4):
            assert m[i, j] == chamfer(ref[j], gen[i])  # symmetric metric


def test_point_cloud_validation():
    with pytest.raises(EvalError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(EvalError):
        PointCloud(np.array([[np.nan, 0, 0]]))
