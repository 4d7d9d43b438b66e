"""Dense distance matrices, exact k-nearest neighbours and seeded random streams."""

from dataclasses import dataclass

import numpy as np

METRICS = ("euclidean", "cosine")


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``.

    Philox is platform independent, so the same pair always yields the
    same sequence. Different streams are statistically independent, which
    lets parallel jump-and-retrain runs draw their directions separately.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    stream = int(stream) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(key=seed | (stream << 64)))


def _as_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"points must be a 2-D array, got shape {X.shape}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 points")
    if not np.all(np.isfinite(X)):
        raise ValueError("points contain NaN or Inf")
    return X


def pairwise_distances(points, metric: str = "euclidean") -> np.ndarray:
    """Symmetric distance matrix with an exactly zero diagonal.

    Parameters
    ----------
    points : (n, d) array
    metric : {"euclidean", "cosine"}
        Cosine distance is ``1 - u.v / (|u| |v|)`` and lies in [0, 2].

    Notes
    -----
    Rows are differenced directly instead of going through the Gram matrix:
    jump-and-retrain samples sit very close to one another relative to their
    norm and the Gram expansion would cancel most significant digits.
    """
    X = _as_points(points)
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if metric == "cosine":
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValueError(f"row {int(zero[0])} has zero norm; cosine distance undefined")
        X = X / norms[:, None]

    n = X.shape[0]
    D = np.zeros((n, n))
    for i in range(n - 1):
        diff = X[i + 1:] - X[i]
        sq = np.einsum("ij,ij->i", diff, diff)
        # for unit vectors |u - v|^2 = 2 - 2 cos(u, v)
        row = 0.5 * sq if metric == "cosine" else np.sqrt(sq)
        D[i, i + 1:] = row
        D[i + 1:, i] = row
    if metric == "cosine":
        np.clip(D, 0.0, 2.0, out=D)
    return D


@dataclass(frozen=True)
class NeighborList:
    """Per-point neighbour indices and distances, each of shape (n, k)."""

    indices: np.ndarray
    distances: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def __len__(self):
        return self.indices.shape[0]

    def kth_distance(self) -> np.ndarray:
        return self.distances[:, -1]


def knn(D, k: int) -> NeighborList:
    """Exact k nearest neighbours from a distance matrix.

    The point itself is never returned. Ties are broken toward the lower
    index (stable sort).
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if D.ndim != 2 or D.shape[1] != n:
        raise ValueError(f"distance matrix must be square, got {D.shape}")
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of points ({n})")

    work = D.copy()
    np.fill_diagonal(work, np.inf)
    order = np.argsort(work, axis=1, kind="stable")[:, :k]
    dist = np.take_along_axis(D, order, axis=1)
    return NeighborList(indices=order, distances=dist)
