"""PHATE embedding built from dense numpy primitives.

Pipeline: distances -> alpha-decay affinities -> Markov diffusion operator
-> diffusion time from the von Neumann entropy knee -> log-potential
distances -> classical MDS initialisation -> SMACOF metric MDS.
"""

from dataclasses import dataclass, field

import numpy as np

from .numkit import knn, pairwise_distances

DEFAULT_FLOOR = 1e-12
T_MAX = 100


@dataclass(frozen=True)
class AffinityMatrix:
    A: np.ndarray
    k: int
    alpha: float
    bandwidth: np.ndarray


@dataclass(frozen=True)
class DiffusionOperator:
    P: np.ndarray
    spectrum: np.ndarray  # |eigenvalues| of the symmetric conjugate, descending


@dataclass(frozen=True)
class Embedding:
    coords: np.ndarray
    stress: float
    t: int
    potential: np.ndarray
    n_iter: int = 0
    stress_history: tuple = ()
    entropy: tuple = ()
    config: dict = field(default_factory=dict)


def alpha_decay_kernel(D, k: int = 5, alpha: float = 2.0) -> AffinityMatrix:
    """Adaptive-bandwidth alpha-decay affinities.

    ``A[i, j] = 0.5 exp(-(D[i,j]/eps_i)^alpha) + 0.5 exp(-(D[i,j]/eps_j)^alpha)``
    where ``eps_i`` is the distance from point i to its k-th nearest
    neighbour. Both halves are evaluated elementwise so the result is
    symmetric bit for bit.
    """
    D = np.asarray(D, dtype=np.float64)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    eps = knn(D, k).kth_distance()
    bad = np.flatnonzero(eps <= 0.0)
    if bad.size:
        raise ValueError(
            f"point {int(bad[0])} has zero {k}-NN distance (at least {k + 1} coincident points)"
        )
    left = np.exp(-((D / eps[:, None]) ** alpha))
    # the same expression transposed, so A == A.T exactly
    A = 0.5 * left + 0.5 * left.T
    return AffinityMatrix(A=A, k=k, alpha=float(alpha), bandwidth=eps)


def diffusion_operator(affinity) -> DiffusionOperator:
    """Row-normalise affinities into a Markov matrix and record its spectrum.

    The spectrum comes from ``S = d^{-1/2} A d^{-1/2}`` (``d`` the row sums),
    which is similar to ``P = diag(1/d) A`` and symmetric, so a symmetric
    eigensolver returns real eigenvalues.
    """
    A = affinity.A if isinstance(affinity, AffinityMatrix) else np.asarray(affinity, dtype=np.float64)
    d = A.sum(axis=1)
    if np.any(d <= 0):
        raise ValueError(f"row {int(np.flatnonzero(d <= 0)[0])} of the affinity matrix sums to zero")
    P = A / d[:, None]
    inv_sqrt = 1.0 / np.sqrt(d)
    S = A * inv_sqrt[:, None] * inv_sqrt[None, :]
    S = 0.5 * (S + S.T)
    spectrum = np.sort(np.abs(np.linalg.eigvalsh(S)))[::-1]
    # rounding can push the leading magnitude a hair above one
    spectrum = np.minimum(spectrum, 1.0)
    return DiffusionOperator(P=P, spectrum=spectrum)


def von_neumann_entropy(spectrum, t: int) -> float:
    """Shannon entropy of the normalised t-th powers of eigenvalue magnitudes."""
    lam = np.abs(np.asarray(spectrum, dtype=np.float64))
    if t < 1:
        raise ValueError("t must be >= 1")
    powered = lam ** t
    total = powered.sum()
    if total <= 0:
        raise ValueError("spectrum is identically zero")
    eta = powered / total
    eta = eta[eta > 0]
    return float(-(eta * np.log(eta)).sum())


def entropy_curve(spectrum, t_max: int = T_MAX) -> np.ndarray:
    return np.array([von_neumann_entropy(spectrum, t) for t in range(1, t_max + 1)])


def knee_point(series) -> int:
    """Knee of a curve: the point farthest from the chord between its ends.

    ``series`` is a sequence of ``(t, value)`` pairs. Both axes are min-max
    scaled to [0, 1] first. Ties resolve to the smaller t, and a flat series
    returns its first t.
    """
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("need at least three (t, value) pairs")
    t, h = arr[:, 0], arr[:, 1]
    if np.ptp(h) == 0 or np.ptp(t) == 0:
        return int(t[0])
    x = (t - t.min()) / np.ptp(t)
    y = (h - h.min()) / np.ptp(h)
    x0, y0, x1, y1 = x[0], y[0], x[-1], y[-1]
    # unnormalised perpendicular distance; the chord length is a shared factor
    dist = np.abs((y1 - y0) * x - (x1 - x0) * y + x1 * y0 - y1 * x0)
    # distances within rounding of the maximum count as ties
    return int(t[int(np.flatnonzero(dist >= dist.max() - 1e-12)[0])])


def matrix_power(P, t: int) -> np.ndarray:
    """P**t by binary exponentiation."""
    if t < 1:
        raise ValueError("t must be >= 1")
    result = None
    base = np.asarray(P, dtype=np.float64)
    while t:
        if t & 1:
            result = base.copy() if result is None else result @ base
        t >>= 1
        if t:
            base = base @ base
    return result


def potential_distances(P, t: int, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Euclidean distances between rows of ``log(P**t)``.

    Entries of ``P**t`` below ``floor`` are raised to ``floor`` before the
    log so weakly connected pairs stay finite.
    """
    if floor <= 0:
        raise ValueError("floor must be positive")
    P = P.P if isinstance(P, DiffusionOperator) else np.asarray(P, dtype=np.float64)
    Q = matrix_power(P, t)
    return _log_row_distances(Q, floor)


def _log_row_distances(Q, floor):
    L = np.log(np.maximum(Q, floor))
    n = L.shape[0]
    ID = np.zeros((n, n))
    for i in range(n - 1):
        diff = L[i + 1:] - L[i]
        row = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        ID[i, i + 1:] = row
        ID[i + 1:, i] = row
    return ID


def classical_mds(D, dim: int = 2) -> np.ndarray:
    """Torgerson scaling: top eigenpairs of the double-centred squared distances."""
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D ** 2) @ J
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:dim]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    # eigenvector sign is arbitrary; pin it so reruns agree
    for c in range(evecs.shape[1]):
        j = np.argmax(np.abs(evecs[:, c]))
        if evecs[j, c] < 0:
            evecs[:, c] = -evecs[:, c]
    X = evecs * np.sqrt(evals)[None, :]
    if X.shape[1] < dim:
        X = np.hstack([X, np.zeros((n, dim - X.shape[1]))])
    return X


def _embedded_distances(X):
    n, dim = X.shape
    if dim <= 3:
        diff = X[:, None, :] - X[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    out = np.zeros((n, n))
    for i in range(n - 1):
        diff = X[i + 1:] - X[i]
        row = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        out[i, i + 1:] = row
        out[i + 1:, i] = row
    return out


def stress(D, X) -> float:
    """Raw stress: sum over i < j of (D[i,j] - |x_i - x_j|)^2."""
    d_hat = _embedded_distances(np.asarray(X, dtype=np.float64))
    iu = np.triu_indices(d_hat.shape[0], 1)
    return float(((np.asarray(D)[iu] - d_hat[iu]) ** 2).sum())


def smacof_mds(D, init, dim: int = 2, max_iter: int = 300, rel_tol: float = 1e-6) -> Embedding:
    """Metric MDS by stress majorisation (Guttman transform, unit weights).

    Iterates ``X <- B(X) X / n`` from ``init`` until the relative drop in
    stress falls below ``rel_tol`` or ``max_iter`` updates have run. The
    stress after every update is kept in ``stress_history``; the first
    entry is the stress of ``init``.
    """
    D = np.asarray(D, dtype=np.float64)
    X = np.array(init, dtype=np.float64, copy=True)
    n = D.shape[0]
    if X.shape != (n, dim):
        raise ValueError(f"init must have shape {(n, dim)}, got {X.shape}")

    iu = np.triu_indices(n, 1)
    exact = 1e-24 * float((D[iu] ** 2).sum())
    d_hat = _embedded_distances(X)
    sigma = float(((D[iu] - d_hat[iu]) ** 2).sum())
    history = [sigma]
    n_iter = 0
    while n_iter < max_iter:
        if not np.isfinite(sigma):
            raise FloatingPointError("stress became non-finite; check the input distances for NaN")
        if sigma <= exact:
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d_hat > 0, D / d_hat, 0.0)
        B = -ratio
        np.fill_diagonal(B, 0.0)
        np.fill_diagonal(B, -B.sum(axis=1))
        X_new = B @ X / n
        d_new = _embedded_distances(X_new)
        sigma_new = float(((D[iu] - d_new[iu]) ** 2).sum())
        n_iter += 1
        if not np.isfinite(sigma_new):
            raise FloatingPointError("stress became non-finite; check the input distances for NaN")
        if sigma_new > sigma:
            # majorisation cannot increase stress; anything here is rounding
            history.append(sigma)
            break
        X, d_hat = X_new, d_new
        decrease = sigma - sigma_new
        sigma = sigma_new
        history.append(sigma)
        if sigma <= exact or decrease < rel_tol * history[-2]:
            break
    return Embedding(
        coords=X, stress=sigma, t=0, potential=D, n_iter=n_iter, stress_history=tuple(history)
    )


def select_t(spectrum, t_max: int = T_MAX):
    H = entropy_curve(spectrum, t_max)
    series = np.column_stack([np.arange(1, t_max + 1), H])
    return knee_point(series), H


def phate_embed(points, metric="euclidean", k=5, alpha=2.0, dim=2, t="auto",
                t_max=T_MAX, floor=DEFAULT_FLOOR, max_iter=300, rel_tol=1e-6) -> Embedding:
    """Embed ``points`` (n, d) into ``dim`` dimensions with PHATE.

    ``t="auto"`` picks the diffusion time at the knee of the von Neumann
    entropy over t = 1..t_max; an integer fixes it. The metric only applies
    to the input distances, the embedding always fits euclidean distances
    to the potential distances.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.shape[0] < k + 2:
        raise ValueError(f"need at least k+2 = {k + 2} points, got {X.shape[0]}")
    D = pairwise_distances(X, metric)
    aff = alpha_decay_kernel(D, k, alpha)
    op = diffusion_operator(aff)
    if t == "auto":
        t_sel, H = select_t(op.spectrum, t_max)
    else:
        t_sel, H = int(t), ()
        if t_sel < 1:
            raise ValueError("t must be >= 1 or 'auto'")
    ID = potential_distances(op.P, t_sel, floor)
    init = classical_mds(ID, dim)
    fit = smacof_mds(ID, init, dim, max_iter=max_iter, rel_tol=rel_tol)
    cfg = {"metric": metric, "k": k, "alpha": alpha, "dim": dim, "t": t}
    return Embedding(
        coords=fit.coords, stress=fit.stress, t=t_sel, potential=ID, n_iter=fit.n_iter,
        stress_history=fit.stress_history, entropy=tuple(np.asarray(H).tolist()), config=cfg,
    )
