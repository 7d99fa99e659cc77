"""Surface point sampling and the set-level generative metric suite.

Chamfer distance is the symmetric mean of squared nearest-neighbor
distances; MMD, COV, and 1-NNA are built on the pairwise Chamfer matrix;
JSD compares pooled voxel-occupancy histograms over [-0.5, +0.5]^3.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from ._kernels import nn_sqdists
from .canonical import normalize
from .errors import EvalError
from .geometry_io import Mesh
from .rng import philox_stream

DEFAULT_POINTS = 2048
DEFAULT_JSD_GRID = 28
_JSD_EPS = 1e-12


@dataclass
class PointCloud:
    points: np.ndarray  # (P, 3) float64
    source_id: str | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise EvalError("point cloud is empty")
        if not np.isfinite(self.points).all():
            raise EvalError("point cloud has non-finite coordinates")


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.ascontiguousarray(x, dtype=np.float64)


def sample_points(mesh: Mesh, n: int, seed: int = 0, rng: np.random.Generator | None = None) -> PointCloud:
    """Draw n surface points, faces weighted by area, uniform barycentric within."""
    if rng is None:
        rng = philox_stream(seed)
    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = areas.sum()
    if not total > 0.0:
        raise EvalError("mesh has zero total surface area")
    cdf = np.cumsum(areas) / total
    cdf[-1] = 1.0
    face_ids = np.searchsorted(cdf, rng.random(n), side="right")
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    base = tri[face_ids]
    pts = base[:, 0] + u[:, None] * (base[:, 1] - base[:, 0]) + v[:, None] * (base[:, 2] - base[:, 0])
    return PointCloud(pts, source_id=mesh.source_id)


def chamfer(a, b) -> float:
    """Mean squared NN distance a->b plus mean squared NN distance b->a."""
    pa, pb = _points(a), _points(b)
    return float(nn_sqdists(pa, pb).mean() + nn_sqdists(pb, pa).mean())


def hausdorff(a, b) -> float:
    """max over both directions of the largest Euclidean NN distance."""
    pa, pb = _points(a), _points(b)
    return float(np.sqrt(max(nn_sqdists(pa, pb).max(), nn_sqdists(pb, pa).max())))


def pairwise_chamfer(gen, ref) -> np.ndarray:
    """Chamfer matrix of shape (len(gen), len(ref))."""
    gen = [_points(g) for g in gen]
    ref = [_points(r) for r in ref]
    out = np.empty((len(gen), len(ref)), dtype=np.float64)
    for i, g in enumerate(gen):
        for j, r in enumerate(ref):
            out[i, j] = chamfer(g, r)
    return out


def mmd(gen, ref, matrix: np.ndarray | None = None) -> float:
    """Mean over references of the Chamfer distance to their closest generation."""
    m = pairwise_chamfer(gen, ref) if matrix is None else matrix
    if m.size == 0:
        raise EvalError("mmd needs non-empty sets")
    return float(m.min(axis=0).mean())


def cov(gen, ref, matrix: np.ndarray | None = None) -> float:
    """Percentage of references that are the nearest reference of some generation."""
    m = pairwise_chamfer(gen, ref) if matrix is None else matrix
    if m.size == 0:
        raise EvalError("cov needs non-empty sets")
    matched = np.unique(np.argmin(m, axis=1))  # argmin tie -> lowest reference index
    return 100.0 * len(matched) / m.shape[1]


def one_nna(
    gen,
    ref,
    gen_ref: np.ndarray | None = None,
    gen_gen: np.ndarray | None = None,
    ref_ref: np.ndarray | None = None,
) -> float:
    """Leave-one-out 1-NN classification accuracy over gen + ref under Chamfer."""
    if gen_ref is None:
        gen = [_points(g) for g in gen]
        ref = [_points(r) for r in ref]
        gen_ref = pairwise_chamfer(gen, ref)
        gen_gen = pairwise_chamfer(gen, gen)
        ref_ref = pairwise_chamfer(ref, ref)
    g, r = gen_ref.shape
    if g == 0 or r == 0:
        raise EvalError("one_nna needs non-empty sets")
    full = np.block([[gen_gen, gen_ref], [gen_ref.T, ref_ref]])
    np.fill_diagonal(full, np.inf)
    nearest = np.argmin(full, axis=1)  # tie -> lower global index
    labels = np.concatenate([np.zeros(g, dtype=int), np.ones(r, dtype=int)])
    correct = int((labels[nearest] == labels).sum())
    return 100.0 * correct / len(labels)


def voxel_histogram(points: np.ndarray, grid: int) -> np.ndarray:
    """Occupancy counts over a grid^3 voxelization of [-0.5, +0.5]^3 (outliers clamped)."""
    idx = np.clip(np.floor((points + 0.5) * grid), 0, grid - 1).astype(np.int64)
    flat = (idx[:, 0] * grid + idx[:, 1]) * grid + idx[:, 2]
    return np.bincount(flat, minlength=grid**3).astype(np.float64)


def jsd(gen, ref, grid: int = DEFAULT_JSD_GRID) -> float:
    """Jensen-Shannon divergence between pooled voxel distributions (natural log)."""
    gp = np.concatenate([_points(g) for g in gen])
    rp = np.concatenate([_points(r) for r in ref])
    hg = voxel_histogram(gp, grid)
    hr = voxel_histogram(rp, grid)
    p = (hg + _JSD_EPS) / (hg.sum() + _JSD_EPS * hg.size)
    q = (hr + _JSD_EPS) / (hr.sum() + _JSD_EPS * hr.size)
    m = 0.5 * (p + q)
    kl_pm = float(np.sum(p * np.log(p / m)))
    kl_qm = float(np.sum(q * np.log(q / m)))
    return 0.5 * kl_pm + 0.5 * kl_qm


@dataclass
class EvalReport:
    """Metric suite results; mmd and jsd carry the conventional x1000 scaling."""

    cov: float
    mmd_x1000: float
    one_nna: float
    jsd_x1000: float
    n_gen: int
    n_ref: int
    n_points: int
    seed: int
    jsd_grid: int
    excluded_gen: list[str] = field(default_factory=list)
    excluded_ref: list[str] = field(default_factory=list)
    matrix_path: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def _prepare_clouds(
    meshes: list[Mesh],
    n_points: int,
    seed: int,
    do_normalize: bool,
) -> tuple[list[PointCloud], list[str]]:
    clouds: list[PointCloud] = []
    excluded: list[str] = []
    for index, mesh in enumerate(meshes):
        label = mesh.source_id or f"mesh-{index}"
        try:
            if do_normalize:
                mesh, _ = normalize(mesh)
            clouds.append(sample_points(mesh, n_points, rng=philox_stream(seed, index)))
        except Exception as exc:
            excluded.append(f"{label}: {exc}")
    return clouds, excluded


def evaluate(
    gen_meshes: list[Mesh],
    ref_meshes: list[Mesh],
    n_points: int = DEFAULT_POINTS,
    seed: int = 0,
    jsd_grid: int = DEFAULT_JSD_GRID,
    do_normalize: bool = True,
    matrix_path: str | None = None,
) -> EvalReport:
    """Sample both sets and compute COV / MMD / 1-NNA / JSD.

    Per-mesh point streams derive from (seed, index within set), so identical
    sets produce identical clouds. Meshes that cannot be sampled are excluded
    and listed in the report.
    """
    gen_clouds, excluded_gen = _prepare_clouds(gen_meshes, n_points, seed, do_normalize)
    ref_clouds, excluded_ref = _prepare_clouds(ref_meshes, n_points, seed, do_normalize)
    if not gen_clouds:
        raise EvalError("no usable generated meshes")
    if not ref_clouds:
        raise EvalError("no usable reference meshes")

    gen_pts = [c.points for c in gen_clouds]
    ref_pts = [c.points for c in ref_clouds]
    gen_ref = pairwise_chamfer(gen_pts, ref_pts)
    gen_gen = pairwise_chamfer(gen_pts, gen_pts)
    ref_ref = pairwise_chamfer(ref_pts, ref_pts)

    if matrix_path is not None:
        save_matrix(
            matrix_path,
            gen_ref,
            gen_ids=[c.source_id or f"gen-{i}" for i, c in enumerate(gen_clouds)],
            ref_ids=[c.source_id or f"ref-{i}" for i, c in enumerate(ref_clouds)],
        )

    return EvalReport(
        cov=cov(None, None, matrix=gen_ref),
        mmd_x1000=1000.0 * mmd(None, None, matrix=gen_ref),
        one_nna=one_nna(None, None, gen_ref=gen_ref, gen_gen=gen_gen, ref_ref=ref_ref),
        jsd_x1000=1000.0 * jsd(gen_pts, ref_pts, grid=jsd_grid),
        n_gen=len(gen_clouds),
        n_ref=len(ref_clouds),
        n_points=n_points,
        seed=seed,
        jsd_grid=jsd_grid,
        excluded_gen=excluded_gen,
        excluded_ref=excluded_ref,
        matrix_path=str(matrix_path) if matrix_path is not None else None,
    )


def save_matrix(path, matrix: np.ndarray, gen_ids: list[str], ref_ids: list[str]) -> None:
    """Dump a distance matrix as little-endian f32 with a JSON shape sidecar."""
    path = str(path)
    matrix.astype("<f4").tofile(path)
    sidecar = {
        "shape": list(matrix.shape),
        "dtype": "float32-le",
        "gen_ids": gen_ids,
        "ref_ids": ref_ids,
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
