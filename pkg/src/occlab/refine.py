"""Probability-guided voxel refinement of the aggregated semantic map.

Three stages clean up coarse image-transferred labels: ground extraction by
randomized plane-hypothesis sampling with inlier maximization, per-frame
k-means clustering of the remaining points with majority relabeling inside
each cluster, and per-voxel majority voting over all contained points.

Every stage is deterministic given its seed; all ties break toward the
smaller label id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabeledPointCloud, LabelSet
from .errors import ConfigurationError, DegenerateInputError
from .voxel import GridSpec, VoxelGrid, voxel_indices

DEFAULT_EPSILON = 0.2
DEFAULT_RANSAC_ITERATIONS = 512


@dataclass(frozen=True)
class Plane:
    """n . p = offset with unit normal n."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3).copy()
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-12:
            raise ConfigurationError(f"plane normal norm {norm} is not 1")
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned point-to-plane distance."""
        return np.abs(np.asarray(points, dtype=np.float64) @ self.normal - self.offset)

    def height_at(self, x, y):
        """z of the plane at (x, y); undefined for vertical planes."""
        nx, ny, nz = self.normal
        return (self.offset - nx * x - ny * y) / nz


@dataclass(frozen=True)
class ClusterAssignment:
    centroids: np.ndarray
    assignment: np.ndarray
    objective: float
    objective_history: tuple
    k_clamped: bool = False


def _canonical_normal(n: np.ndarray) -> np.ndarray:
    """Flip sign so the largest-magnitude component is positive."""
    i = int(np.argmax(np.abs(n)))
    return -n if n[i] < 0 else n


def _lstsq_plane(points: np.ndarray) -> Plane:
    centroid = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - centroid, full_matrices=False)
    if s[1] < 1e-12 * max(s[0], 1.0):
        raise DegenerateInputError("inlier set is collinear; cannot refit a plane")
    n = _canonical_normal(vt[2])
    return Plane(n / np.linalg.norm(n), float(n @ centroid))


def fit_ground(
    m_s: LabeledPointCloud,
    epsilon: float = DEFAULT_EPSILON,
    iterations: int = DEFAULT_RANSAC_ITERATIONS,
    seed: int = 0,
):
    """Extract the ground plane by inlier-count maximization.

    Samples `iterations` three-point plane hypotheses with a seeded generator,
    keeps the one with the most points within `epsilon`, and refits it by
    least squares on its inliers. Returns (plane, ground, non_ground); the
    two clouds partition the input exactly.
    """
    if epsilon <= 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    pts = m_s.points
    n = len(pts)
    if n < 3:
        raise DegenerateInputError(f"plane fitting needs at least 3 points, got {n}")
    rng = np.random.default_rng(seed)
    scale = np.abs(pts).max() if n else 1.0
    best_count = -1
    best = None
    for _ in range(iterations):
        i, j, k = rng.choice(n, size=3, replace=False)
        nvec = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(nvec)
        if norm < 1e-12 * max(scale * scale, 1.0):
            continue  # collinear sample
        normal = nvec / norm
        offset = float(normal @ pts[i])
        count = int((np.abs(pts @ normal - offset) < epsilon).sum())
        if count > best_count:
            best_count = count
            best = (normal, offset)
    if best is None:
        raise DegenerateInputError("all sampled triples were collinear")
    normal, offset = best
    if normal[np.argmax(np.abs(normal))] < 0:
        normal, offset = -normal, -offset
    rough = Plane(normal, offset)
    inliers = rough.distance(pts) < epsilon
    plane = _lstsq_plane(pts[inliers]) if inliers.sum() >= 3 else rough
    ground_mask = plane.distance(pts) < epsilon
    return plane, m_s.select(ground_mask), m_s.select(~ground_mask)


def _assign(points: np.ndarray, centroids: np.ndarray):
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assignment = np.argmin(d2, axis=1)
    return assignment, d2[np.arange(len(points)), assignment]


def _seed_centroids(points: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ style seeding: next centroid drawn proportional to D^2."""
    n = len(points)
    centroids = np.empty((k, 3))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def kmeans_frame(
    points: LabeledPointCloud,
    k: int,
    max_iters: int = 50,
    seed: int = 0,
) -> ClusterAssignment:
    """Lloyd iterations from deterministic seeding until a fixed point.

    The recorded objective (sum of squared distances after each assignment)
    is non-increasing. Clusters that empty out are re-seeded to the point
    farthest from its own centroid. k larger than the point count is clamped
    and flagged.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    n = len(points)
    if n == 0:
        raise DegenerateInputError("cannot cluster an empty cloud")
    clamped = k > n
    k = min(k, n)
    pts = points.points
    rng = np.random.default_rng(seed)

    centroids = _seed_centroids(pts, k, rng)
    assignment, d2 = _assign(pts, centroids)
    history = [float(d2.sum())]
    for _ in range(max_iters):
        new_centroids = centroids.copy()
        counts = np.bincount(assignment, minlength=k)
        sums = np.zeros((k, 3))
        np.add.at(sums, assignment, pts)
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]

        empty = np.nonzero(~nonempty)[0]
        if len(empty):
            # steal the globally worst-served points, one per empty cluster
            far_order = np.argsort(-d2, kind="stable")
            taken = far_order[: len(empty)]
            for c, p in zip(empty, taken):
                new_centroids[c] = pts[p]

        new_assignment, d2 = _assign(pts, new_centroids)
        history.append(float(d2.sum()))
        converged = bool((new_assignment == assignment).all())
        centroids, assignment = new_centroids, new_assignment
        if converged:
            break
    return ClusterAssignment(centroids, assignment, history[-1], tuple(history), clamped)


def relabel_clusters(
    points: LabeledPointCloud,
    assignment: ClusterAssignment,
    labelset: LabelSet,
) -> LabeledPointCloud:
    """Give every point its cluster's most frequent label.

    Unknown labels carry no evidence and are excluded from the vote unless a
    cluster is entirely unknown; ties break toward the smaller id.
    """
    assign = np.asarray(assignment.assignment)
    if len(assign) != len(points):
        raise ConfigurationError(
            f"assignment covers {len(assign)} points, cloud has {len(points)}"
        )
    labels = points.labels.copy()
    k = len(assignment.centroids)
    for c in range(k):
        members = assign == c
        if not members.any():
            continue
        cluster_labels = points.labels[members]
        known = cluster_labels[cluster_labels != labelset.unknown_id]
        votes = known if len(known) else cluster_labels
        ids, counts = np.unique(votes, return_counts=True)
        labels[members] = ids[np.argmax(counts)]  # unique() sorts ids: ties go small
    return points.with_labels(labels)


def vote_voxels(m: LabeledPointCloud, spec: GridSpec, labelset: LabelSet) -> VoxelGrid:
    """Per-voxel majority vote over contained point labels.

    Voxels without points are free. Unknown votes count only when a voxel has
    no known label at all; ties break toward the smaller label id. The result
    is invariant to any permutation of the input points.
    """
    nx, ny, nz = spec.dims
    n_vox = nx * ny * nz
    grid = VoxelGrid(spec, fill=labelset.free_id)
    if len(m) == 0:
        return grid
    inside, idx = voxel_indices(m.points, spec)
    if len(idx) == 0:
        return grid
    flat = idx[:, 0] + np.int64(nx) * idx[:, 1] + np.int64(nx * ny) * idx[:, 2]
    labels = m.labels[inside].astype(np.int64)

    base = int(labels.max()) + 1
    pair = flat * base + labels
    uniq, counts = np.unique(pair, return_counts=True)
    vox = uniq // base
    lab = uniq % base

    # pick per voxel: known labels first, then count desc, then smaller id
    is_unknown = (lab == labelset.unknown_id).astype(np.int8)
    order = np.lexsort((lab, -counts, is_unknown, vox))
    vox, lab = vox[order], lab[order]
    first = np.unique(vox, return_index=True)[1]
    out = np.full(n_vox, labelset.free_id, dtype=np.uint16)
    out[vox[first]] = lab[first]
    grid.labels = out.reshape((nx, ny, nz), order="F")
    return grid
