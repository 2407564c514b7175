"""Prototype selection by quantizing the space of component curves.

Four selectors are provided: Lloyd K-means on the raw curves (cluster means
as prototypes), the same with each centroid snapped to its nearest component,
K-means in a diffusion-map embedding, and greedy farthest-point subset
selection.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateDictionary, EpsilonTooSmall, ValidationError
from .model import (
    Dictionary,
    PrototypeBasis,
    cluster_mean_alpha,
    indicator_alpha,
    validate_dictionary,
)


@dataclass(frozen=True)
class KMeansConfig:
    K: int
    max_iter: int = 300
    tol: float = 1e-10
    n_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if self.n_restarts < 1:
            raise ValidationError("n_restarts must be >= 1")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")


@dataclass(frozen=True)
class DiffusionConfig:
    kmeans: KMeansConfig
    # bandwidth = epsilon_multiplier * median squared pairwise distance, unless epsilon_fixed is set
    epsilon_multiplier: float = 1.0
    epsilon_fixed: Optional[float] = None
    # None: smallest m with lambda_m / lambda_1 < eigen_ratio, capped at max_coords
    n_coords: Optional[int] = None
    eigen_ratio: float = 0.05
    max_coords: int = 20

    def __post_init__(self):
        if self.epsilon_fixed is not None and not self.epsilon_fixed > 0:
            raise ValidationError("epsilon_fixed must be positive")
        if not self.epsilon_multiplier > 0:
            raise ValidationError("epsilon_multiplier must be positive")
        if self.n_coords is not None and self.n_coords < 1:
            raise ValidationError("n_coords must be >= 1")


def pairwise_sq_dists(Z: np.ndarray, C: Optional[np.ndarray] = None) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``Z`` and ``C``."""
    if C is None:
        C = Z
    diff = Z[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_cost(Z: np.ndarray, labels: np.ndarray, K: int) -> float:
    """Empirical quantization cost: sum of squared distances to the cluster means."""
    cost = 0.0
    for k in range(K):
        members = Z[labels == k]
        if len(members):
            cost += float(np.sum((members - members.mean(axis=0)) ** 2))
    return cost


def _kmeanspp(Z, K, rng):
    N = Z.shape[0]
    centers = [int(rng.integers(N))]
    d2 = pairwise_sq_dists(Z, Z[centers[0]][None])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            nxt = int(rng.integers(N))
        else:
            nxt = int(rng.choice(N, p=d2 / total))
        centers.append(nxt)
        d2 = np.minimum(d2, pairwise_sq_dists(Z, Z[nxt][None])[:, 0])
    return Z[centers].copy()


def _means(Z, labels, K):
    C = np.zeros((K, Z.shape[1]))
    for k in range(K):
        C[k] = Z[labels == k].mean(axis=0)
    return C


def lloyd(Z: np.ndarray, K: int, rng: np.random.Generator, max_iter: int = 300, tol: float = 1e-10):
    """One Lloyd run from k-means++ seeds.

    Returns ``(labels, centers, cost_history, converged)`` where
    ``cost_history[t]`` is the quantization cost after iteration ``t``.
    Empty clusters are re-seeded with the point farthest from its own center.
    """
    C = _kmeanspp(Z, K, rng)
    history = []
    labels = None
    converged = False
    for _ in range(max_iter):
        d2 = pairwise_sq_dists(Z, C)
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=K)
        while np.any(counts == 0):
            k = int(np.flatnonzero(counts == 0)[0])
            own = d2[np.arange(len(Z)), new]
            # only points whose cluster keeps at least one member can move
            own = np.where(counts[new] > 1, own, -np.inf)
            i = int(np.argmax(own))
            new[i] = k
            d2[i, k] = 0.0
            counts = np.bincount(new, minlength=K)
        C = _means(Z, new, K)
        cost = kmeans_cost(Z, new, K)
        stable = labels is not None and np.array_equal(new, labels)
        labels = new
        history.append(cost)
        if stable or cost == 0.0:
            converged = True
            break
        if len(history) > 1 and history[-2] - cost <= tol * history[-2]:
            converged = True
            break
    return labels, C, history, converged


def _check_distinct(Z, K):
    n_distinct = len(np.unique(Z, axis=0))
    if n_distinct < K:
        raise DegenerateDictionary(f"only {n_distinct} distinct components for K={K}")


def best_of_restarts(Z: np.ndarray, cfg: KMeansConfig):
    """Run ``cfg.n_restarts`` Lloyd runs and keep the lowest cost (ties: lowest restart index)."""
    if cfg.K > Z.shape[0]:
        raise DegenerateDictionary(f"K={cfg.K} exceeds N={Z.shape[0]}")
    _check_distinct(Z, cfg.K)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts)
    runs = []
    for r, ss in enumerate(streams):
        labels, C, hist, conv = lloyd(Z, cfg.K, np.random.default_rng(ss), cfg.max_iter, cfg.tol)
        runs.append((kmeans_cost(Z, labels, cfg.K), r, labels, C, hist, conv))
    cost, r, labels, C, hist, conv = min(runs, key=lambda t: (t[0], t[1]))
    info = {
        "cost": cost,
        "restart": r,
        "cost_history": hist,
        "converged": conv,
        "restart_costs": [t[0] for t in runs],
        "all_histories": [t[4] for t in runs],
    }
    return labels, C, info


def kmeans_select(dictionary: Dictionary, cfg: KMeansConfig) -> PrototypeBasis:
    """K-means prototypes: each prototype is the mean of one cluster of curves.

    ``alpha[i, k] = 1 / |S_k|`` when component i falls in cluster k.
    """
    validate_dictionary(dictionary)
    Z = dictionary.curves.T
    labels, _, info = best_of_restarts(Z, cfg)
    info["labels"] = labels.tolist()
    info["config"] = asdict(cfg)
    return PrototypeBasis.from_alpha(dictionary, cluster_mean_alpha(labels, cfg.K), "km", info)


def kmeans_central_select(dictionary: Dictionary, cfg: KMeansConfig) -> PrototypeBasis:
    """K-means, then each centroid is replaced by its nearest dictionary component."""
    validate_dictionary(dictionary)
    Z = dictionary.curves.T
    labels, C, info = best_of_restarts(Z, cfg)
    d2 = pairwise_sq_dists(C, Z)
    chosen = [int(np.argmin(row)) for row in d2]  # argmin keeps the lowest index on ties
    info["labels"] = labels.tolist()
    info["chosen"] = chosen
    info["config"] = asdict(cfg)
    return PrototypeBasis.from_alpha(
        dictionary, indicator_alpha(dictionary.N, chosen), "km-central", info
    )


@dataclass(frozen=True)
class DiffusionSpectrum:
    epsilon: float
    eigenvalues: np.ndarray  # descending, eigenvalues[0] == 1
    psi: np.ndarray  # right eigenvectors of the Markov matrix, psi[:, 0] == 1
    n_coords: int
    markov: np.ndarray = field(repr=False)

    def coords(self, n: Optional[int] = None) -> np.ndarray:
        n = self.n_coords if n is None else n
        return self.psi[:, 1:n + 1] * self.eigenvalues[1:n + 1]


def diffusion_spectrum(dictionary: Dictionary, cfg: DiffusionConfig) -> DiffusionSpectrum:
    """Eigen-decomposition of the row-normalized Gaussian kernel on the curves."""
    Z = dictionary.curves.T
    N = Z.shape[0]
    if N < 2:
        raise ValidationError("diffusion map needs N >= 2")
    D2 = pairwise_sq_dists(Z)
    D2 = 0.5 * (D2 + D2.T)
    np.fill_diagonal(D2, 0.0)
    if cfg.epsilon_fixed is not None:
        eps = float(cfg.epsilon_fixed)
    else:
        med = float(np.median(D2[np.triu_indices(N, 1)]))
        if med <= 0:
            raise EpsilonTooSmall("median squared distance is zero")
        eps = cfg.epsilon_multiplier * med
    W = np.exp(-D2 / eps)
    off = W.sum(axis=1) - 1.0
    if np.any(off < 1e-300):
        i = int(np.argmin(off))
        raise EpsilonTooSmall(f"component {i} is disconnected at epsilon={eps:.6g}")
    deg = W.sum(axis=1)
    s = np.sqrt(deg)
    S = W / s[:, None] / s[None, :]
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    order = np.argsort(-lam, kind="stable")
    lam, V = lam[order], V[:, order]
    psi = V / V[:, [0]]
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    flip = np.sign(psi[np.argmax(np.abs(psi), axis=0), np.arange(N)])
    flip[flip == 0] = 1.0
    psi = psi * flip
    lam = np.clip(lam, -1.0, 1.0)
    if cfg.n_coords is not None:
        n = min(cfg.n_coords, N - 1)
    else:
        n = min(cfg.max_coords, N - 1)
        if N > 2 and lam[1] > 0:
            ratios = np.abs(lam[1:]) / lam[1]
            below = np.flatnonzero(ratios < cfg.eigen_ratio)
            if below.size:
                n = min(n, int(below[0]) + 1)
    return DiffusionSpectrum(eps, lam, psi, max(n, 1), W / deg[:, None])


def diffusion_map(dictionary: Dictionary, cfg: DiffusionConfig) -> np.ndarray:
    """Diffusion coordinates ``lambda_l * psi_l`` for ``l = 1..n_coords`` (N x n_coords)."""
    validate_dictionary(dictionary)
    return diffusion_spectrum(dictionary, cfg).coords()


def diffusion_kmeans_select(dictionary: Dictionary, cfg: DiffusionConfig) -> PrototypeBasis:
    """K-means in diffusion coordinates; prototypes average the original curves per cluster."""
    validate_dictionary(dictionary)
    spec = diffusion_spectrum(dictionary, cfg)
    Z = spec.coords()
    labels, _, info = best_of_restarts(Z, cfg.kmeans)
    info.update(
        labels=labels.tolist(),
        epsilon=spec.epsilon,
        n_coords=spec.n_coords,
        eigenvalues=spec.eigenvalues[: spec.n_coords + 1].tolist(),
        config={**asdict(cfg), "diffusion_time": 1},
    )
    return PrototypeBasis.from_alpha(
        dictionary, cluster_mean_alpha(labels, cfg.kmeans.K), "dkm", info
    )


def uss_order(Z: np.ndarray, K: int) -> list:
    """Greedy farthest-point order, seeded at the point farthest from the mean."""
    N = Z.shape[0]
    if not 1 <= K <= N:
        raise ValidationError(f"K must be in 1..{N}, got {K}")
    first = int(np.argmax(np.sum((Z - Z.mean(axis=0)) ** 2, axis=1)))
    chosen = [first]
    dmin = np.sqrt(pairwise_sq_dists(Z, Z[first][None])[:, 0])
    dmin[first] = -np.inf
    for _ in range(1, K):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.sqrt(pairwise_sq_dists(Z, Z[nxt][None])[:, 0]))
        dmin[chosen] = -np.inf
    return chosen


def uss_select(dictionary: Dictionary, K: int) -> PrototypeBasis:
    """Uniform subset selection: repeatedly add the component farthest from those chosen."""
    validate_dictionary(dictionary)
    chosen = uss_order(dictionary.curves.T, K)
    return PrototypeBasis.from_alpha(
        dictionary, indicator_alpha(dictionary.N, chosen), "uss", {"chosen": chosen, "K": K}
    )
