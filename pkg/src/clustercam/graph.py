"""Feature-map clustering: K-means and graph-spectral partitioning.

The spectral path treats each feature map as a graph vertex: a pairwise
similarity matrix becomes a thresholded weighted adjacency, its (normalized)
Laplacian is eigendecomposed, and K-means runs on the rows of the low-order
eigenvector embedding. The direct path runs K-means on the flattened maps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    NonFiniteError,
    ParameterError,
)
from .types import FeatureMapStack, validate_stack

SimilarityMetric = Literal["euclidean_exp", "ssim"]
AdjacencyMode = Literal["similarity_form", "distance_form"]
ClusterMethod = Literal["kmeans_direct", "spectral"]
KmeansInit = Literal["random_partition", "plusplus"]

KMEANS_MAX_ITER = 300
_EPS_LOG = 1e-300  # floor before log so recovered distances stay finite


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric N x N similarity in [0, 1] with unit diagonal."""

    s: np.ndarray
    metric: SimilarityMetric
    norm_constant: float = 1.0  # distance scale used by euclidean_exp

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        s = 0.5 * (s + s.T)  # constructed symmetric, not merely tested
        s.setflags(write=False)
        object.__setattr__(self, "s", s)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DimensionMismatchError(f"similarity must be square, got {s.shape}")
        if not np.isfinite(s).all():
            raise NonFiniteError("similarity contains non-finite values")
        if s.min() < -1e-9 or s.max() > 1 + 1e-9:
            raise ParameterError("similarity entries must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Symmetric weighted adjacency with zero diagonal (no self-loops)."""

    a: np.ndarray
    theta: float
    sigma: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        a = 0.5 * (a + a.T)
        np.fill_diagonal(a, 0.0)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        if not (0.0 <= self.theta < 1.0):
            raise ParameterError(f"theta must be in [0, 1), got {self.theta}")
        if not self.sigma > 0.0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if a.min() < 0.0:
            raise ParameterError("adjacency weights must be nonnegative")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def degrees(self) -> np.ndarray:
        return self.a.sum(axis=1)


@dataclass(frozen=True)
class LaplacianMatrix:
    """Graph Laplacian L = D - A, optionally symmetrically normalized."""

    l: np.ndarray
    normalized: bool
    degrees: np.ndarray

    def __post_init__(self):
        l = np.asarray(self.l, dtype=np.float64)
        l = 0.5 * (l + l.T)
        l.setflags(write=False)
        object.__setattr__(self, "l", l)
        d = np.asarray(self.degrees, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "degrees", d)

    @property
    def n(self) -> int:
        return self.l.shape[0]


@dataclass(frozen=True)
class Eigensystem:
    """Full real spectrum of a symmetric matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]

    def __post_init__(self):
        w = np.asarray(self.eigenvalues, dtype=np.float64)
        u = np.asarray(self.eigenvectors, dtype=np.float64)
        w.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "eigenvalues", w)
        object.__setattr__(self, "eigenvectors", u)

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Rows are the K-dimensional spectral coordinates of each vertex."""

    b: np.ndarray
    k: int

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        b.setflags(write=False)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class ClusterAssignment:
    """A partition of N indices into Q nonempty clusters."""

    labels: np.ndarray
    q: int
    iterations: int
    seed: int
    wcss_history: tuple[float, ...] = ()

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        present = np.unique(lab)
        if lab.min(initial=0) < 0 or lab.max(initial=0) >= self.q:
            raise ParameterError("labels must lie in [0, q)")
        if len(present) != self.q:
            raise ParameterError(f"every cluster label in [0, {self.q}) must be nonempty")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


@dataclass(frozen=True)
class ClusterConfig:
    """Knobs for cluster_feature_maps. `k` defaults to q - 1 when None."""

    q: int = 6
    method: ClusterMethod = "kmeans_direct"
    k: Optional[int] = None
    seed: int = 0
    theta: float = 0.1
    sigma: float = 1.0
    metric: SimilarityMetric = "euclidean_exp"
    adjacency_mode: AdjacencyMode = "similarity_form"
    normalized_laplacian: bool = True
    init: KmeansInit = "random_partition"

    def __post_init__(self):
        if self.q < 1:
            raise ParameterError(f"cluster count q must be >= 1, got {self.q}")
        if self.k is not None and self.k < 1:
            raise ParameterError(f"eigenvector count k must be >= 1, got {self.k}")

    def effective_k(self) -> int:
        return self.k if self.k is not None else max(self.q - 1, 1)


def pairwise_similarity(stack: FeatureMapStack, metric: SimilarityMetric = "euclidean_exp",
                        norm_constant: Optional[float] = None) -> SimilarityMatrix:
    """Similarity between every pair of feature maps.

    euclidean_exp: exp(-||F_i - F_j||_F / c). The scale c defaults to the
    median of all pairwise distances (1 if every distance is 0), which keeps
    the similarity spread comparable across layers and models. ssim: global
    structural similarity of the jointly min-max scaled pair, mapped from
    [-1, 1] to [0, 1].
    """
    validate_stack(stack)
    flat = stack.maps.reshape(stack.n, -1).astype(np.float64)
    if metric == "euclidean_exp":
        sq = (flat * flat).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (flat @ flat.T)
        d = np.sqrt(np.maximum(d2, 0.0))
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        if norm_constant is None:
            off = d[np.triu_indices(stack.n, k=1)]
            c = float(np.median(off))
            if c <= 0.0:
                c = 1.0
        else:
            c = float(norm_constant)
            if c <= 0.0:
                raise ParameterError("norm_constant must be > 0")
        s = np.exp(-d / c)
        np.fill_diagonal(s, 1.0)
        return SimilarityMatrix(s, metric, norm_constant=c)
    if metric == "ssim":
        s = np.ones((stack.n, stack.n), dtype=np.float64)
        for i in range(stack.n):
            for j in range(i + 1, stack.n):
                s[i, j] = s[j, i] = _global_ssim(stack.maps[i], stack.maps[j])
        s01 = (s + 1.0) / 2.0
        return SimilarityMatrix(np.clip(s01, 0.0, 1.0), metric)
    raise ParameterError(f"unknown similarity metric {metric!r}")


def _global_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Whole-map SSIM of a pair after joint min-max scaling to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lo = min(x.min(), y.min())
    hi = max(x.max(), y.max())
    if hi > lo:
        x = (x - lo) / (hi - lo)
        y = (y - lo) / (hi - lo)
    else:
        x = np.zeros_like(x)
        y = np.zeros_like(y)
    c1 = (0.01 * 1.0) ** 2  # dynamic range is 1 after joint scaling
    c2 = (0.03 * 1.0) ** 2
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(num / den)


def adjacency(sim: SimilarityMatrix, theta: float = 0.1, sigma: float = 1.0,
              mode: AdjacencyMode = "similarity_form") -> AdjacencyMatrix:
    """Thresholded weighted adjacency from a similarity matrix.

    similarity_form: a = exp(-(1 - s) / sigma) where s > theta, else 0.
    distance_form:   a = exp(-d^2 / sigma^2) with the scale-normalized
    distance d = -log(s) recovered from the euclidean_exp similarity, same
    threshold rule. The diagonal is forced to zero in both forms.
    """
    if not (0.0 <= theta < 1.0):
        raise ParameterError(f"theta must be in [0, 1), got {theta}")
    if not sigma > 0.0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    s = sim.s
    keep = s > theta
    if mode == "similarity_form":
        a = np.where(keep, np.exp(-(1.0 - s) / sigma), 0.0)
    elif mode == "distance_form":
        d = -np.log(np.maximum(s, _EPS_LOG))
        a = np.where(keep, np.exp(-(d * d) / (sigma * sigma)), 0.0)
    else:
        raise ParameterError(f"unknown adjacency mode {mode!r}")
    np.fill_diagonal(a, 0.0)
    return AdjacencyMatrix(a, theta=theta, sigma=sigma)


def laplacian(adj: AdjacencyMatrix, normalized: bool = True) -> LaplacianMatrix:
    """L = D - A, or the symmetric normalization I - D^{-1/2} A D^{-1/2}.

    Isolated vertices (zero degree) get an all-zero row and column in the
    normalized form, including the diagonal entry.
    """
    a = adj.a
    deg = a.sum(axis=1)
    if not normalized:
        l = np.diag(deg) - a
        return LaplacianMatrix(l, normalized=False, degrees=deg)
    inv_sqrt = np.zeros_like(deg)
    pos = deg > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    l = -a * inv_sqrt[:, None] * inv_sqrt[None, :]
    diag = np.where(pos, 1.0, 0.0)
    np.fill_diagonal(l, diag)
    return LaplacianMatrix(l, normalized=True, degrees=deg)


def eig_sym(lap: LaplacianMatrix | np.ndarray) -> Eigensystem:
    """Full spectrum of a symmetric matrix, eigenvalues ascending.

    Backed by LAPACK's symmetric solver; conformance is defined by the
    residual bound ||L u - lambda u|| <= 1e-8 ||L||_F, which the test suite
    checks independently.
    """
    m = lap.l if isinstance(lap, LaplacianMatrix) else np.asarray(lap, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"matrix must be square, got {m.shape}")
    try:
        w, u = np.linalg.eigh(m)
    except np.linalg.LinAlgError as e:
        raise ConvergenceError(f"symmetric eigensolver failed to converge: {e}") from e
    return Eigensystem(w, u)


def spectral_embedding(eig: Eigensystem, k: int) -> EmbeddingMatrix:
    """Columns u_2 .. u_{K+1}: the K smoothest nontrivial eigenvectors."""
    n = eig.n
    if not (1 <= k <= n - 1):
        raise ParameterError(f"k must satisfy 1 <= k <= N-1 = {n - 1}, got {k}")
    return EmbeddingMatrix(eig.eigenvectors[:, 1:k + 1], k=k)


def _wcss(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    diff = points - centroids[labels]
    return float((diff * diff).sum())


def _init_labels(points: np.ndarray, q: int, rng: np.random.Generator,
                 init: KmeansInit) -> tuple[np.ndarray, np.ndarray]:
    """Initial (labels, centroids). Every label in [0, q) is populated."""
    n = points.shape[0]
    if init == "random_partition":
        labels = rng.integers(0, q, size=n)
        # steal from the biggest cluster so no label starts empty
        for missing in range(q):
            if not np.any(labels == missing):
                counts = np.bincount(labels, minlength=q)
                donor = int(np.argmax(counts))
                idx = np.flatnonzero(labels == donor)[-1]
                labels[idx] = missing
        centroids = np.stack([points[labels == c].mean(axis=0) for c in range(q)])
        return labels, centroids
    if init == "plusplus":
        centroids = np.empty((q, points.shape[1]), dtype=np.float64)
        first = int(rng.integers(0, n))
        centroids[0] = points[first]
        d2 = ((points - centroids[0]) ** 2).sum(axis=1)
        for c in range(1, q):
            total = d2.sum()
            if total <= 0.0:
                pick = int(rng.integers(0, n))
            else:
                r = rng.random() * total
                pick = int(np.searchsorted(np.cumsum(d2), r))
                pick = min(pick, n - 1)
            centroids[c] = points[pick]
            d2 = np.minimum(d2, ((points - centroids[c]) ** 2).sum(axis=1))
        labels = _assign(points, centroids)
        return labels, centroids
    raise ParameterError(f"unknown init {init!r}")


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    p2 = (points * points).sum(axis=1)[:, None]
    c2 = (centroids * centroids).sum(axis=1)[None, :]
    d2 = p2 + c2 - 2.0 * points @ centroids.T
    return np.argmin(d2, axis=1)  # argmin ties break toward the lowest label


def kmeans(points: Sequence[Sequence[float]] | np.ndarray, q: int, seed: int = 0,
           init: KmeansInit = "random_partition") -> ClusterAssignment:
    """Lloyd's K-means, deterministic for a fixed seed.

    Converges when a full sweep changes no assignment (or the 300-iteration
    budget runs out). Empty clusters are repaired by moving in the point
    farthest from its current centroid. The recorded WCSS sequence is
    non-increasing.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ParameterError("kmeans needs at least one point")
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if q < 1:
        raise ParameterError(f"q must be >= 1, got {q}")
    distinct = np.unique(pts, axis=0).shape[0]
    if q > distinct:
        raise ParameterError(f"q={q} exceeds the {distinct} distinct points")

    rng = np.random.default_rng(seed)
    labels, centroids = _init_labels(pts, q, rng, init)
    history: list[float] = []
    iterations = 0
    for iterations in range(1, KMEANS_MAX_ITER + 1):
        new_labels = _assign(pts, centroids)
        for missing in range(q):
            if not np.any(new_labels == missing):
                counts = np.bincount(new_labels, minlength=q)
                dist = ((pts - centroids[new_labels]) ** 2).sum(axis=1)
                dist[counts[new_labels] <= 1] = -1.0  # never empty another cluster
                idx = int(np.argmax(dist))
                new_labels[idx] = missing
                centroids[missing] = pts[idx]
        changed = bool(np.any(new_labels != labels))
        labels = new_labels
        for c in range(q):
            members = pts[labels == c]
            if members.shape[0]:
                centroids[c] = members.mean(axis=0)
        history.append(_wcss(pts, labels, centroids))
        if not changed:
            break
    return ClusterAssignment(labels, q=q, iterations=iterations, seed=seed,
                             wcss_history=tuple(history))


def cluster_feature_maps(stack: FeatureMapStack, config: ClusterConfig) -> ClusterAssignment:
    """Partition the stack's N maps into config.q clusters.

    kmeans_direct runs K-means on the flattened maps with Euclidean distance.
    spectral builds similarity -> adjacency -> Laplacian -> eigendecomposition,
    then runs K-means on the K-dimensional spectral coordinates.
    """
    validate_stack(stack)
    n = stack.n
    if config.q == 1:
        return ClusterAssignment(np.zeros(n, dtype=np.int64), q=1, iterations=0,
                                 seed=config.seed)
    if config.q > n:
        raise ParameterError(f"q={config.q} exceeds the {n} feature maps")
    if config.method == "kmeans_direct":
        flat = stack.maps.reshape(n, -1)
        return kmeans(flat, config.q, seed=config.seed, init=config.init)
    if config.method == "spectral":
        k = config.effective_k()
        sim = pairwise_similarity(stack, config.metric)
        adj = adjacency(sim, theta=config.theta, sigma=config.sigma,
                        mode=config.adjacency_mode)
        lap = laplacian(adj, normalized=config.normalized_laplacian)
        eig = eig_sym(lap)
        emb = spectral_embedding(eig, k)
        return kmeans(emb.b, config.q, seed=config.seed, init=config.init)
    raise ParameterError(f"unknown clustering method {config.method!r}")
