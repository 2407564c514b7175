"""Gaussian-curve dictionaries and simulated sparse-mixture observations."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyGrid, MissingTruth, ValidationError
from .model import Dictionary, Observation, Truth, validate_dictionary

# Benchmark defaults: 157 widths and 321 sample points.
BENCHMARK_SIGMA = (0.2, 8.0, 0.05)
BENCHMARK_X = (-6.0, 6.0, 0.0375)


def inclusive_range(start: float, stop: float, step: float) -> np.ndarray:
    """``start, start + step, ...`` up to and including ``stop`` (within rounding)."""
    if not step > 0:
        raise ValidationError(f"step must be positive, got {step}")
    if stop < start:
        raise EmptyGrid(f"range {start}:{stop} contains no points")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


def gaussian_dictionary(sigma_min=BENCHMARK_SIGMA[0], sigma_max=BENCHMARK_SIGMA[1],
                        sigma_step=BENCHMARK_SIGMA[2], x_min=BENCHMARK_X[0],
                        x_max=BENCHMARK_X[1], x_step=BENCHMARK_X[2]) -> Dictionary:
    """Zero-mean unit-area Gaussian densities over a grid of widths.

    Component ``i`` is ``exp(-x**2 / (2 sigma_i**2)) / (sigma_i sqrt(2 pi))``
    sampled on the x grid; ``params[:, 0]`` holds ``sigma_i``.
    """
    if not sigma_min > 0:
        raise ValidationError(f"sigma_min must be positive, got {sigma_min}")
    sigma = inclusive_range(sigma_min, sigma_max, sigma_step)
    x = inclusive_range(x_min, x_max, x_step)
    curves = np.exp(-0.5 * (x[:, None] / sigma[None, :]) ** 2) / (sigma * math.sqrt(2 * math.pi))
    d = Dictionary(curves, sigma[:, None], x, ("sigma",))
    validate_dictionary(d)
    return d


@dataclass(frozen=True)
class MixtureSimConfig:
    n_observations: int = 100
    max_components: int = 5
    noise_sd: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_observations < 1:
            raise ValidationError("n_observations must be >= 1")
        if self.max_components < 1:
            raise ValidationError("max_components must be >= 1")
        if not self.noise_sd >= 0:
            raise ValidationError("noise_sd must be >= 0")

    def echo(self) -> dict:
        d = asdict(self)
        d["mixture_law"] = "support size uniform on 1..max_components; support uniform without replacement; flat Dirichlet weights"
        return d


def observation_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for observation ``index``; serial and parallel runs agree."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def simulate_one(dictionary: Dictionary, cfg: MixtureSimConfig, index: int) -> Observation:
    rng = observation_rng(cfg.seed, index)
    N, p = dictionary.N, dictionary.p
    m = int(rng.integers(1, cfg.max_components + 1))
    support = rng.choice(N, size=m, replace=False)
    weights = rng.dirichlet(np.ones(m))
    gamma = np.zeros(N)
    gamma[support] = weights
    y = dictionary.curves[:, support] @ weights
    noise_scale = None
    if cfg.noise_sd > 0:
        y = y + rng.normal(0.0, cfg.noise_sd, size=p)
        noise_scale = np.full(p, cfg.noise_sd)
    rho = gamma @ dictionary.params
    return Observation(y, noise_scale, Truth(gamma, rho))


def simulate_mixtures(dictionary: Dictionary, cfg: MixtureSimConfig) -> list:
    """Draw ``cfg.n_observations`` noisy sparse convex mixtures of dictionary curves.

    For each observation: the support size m is uniform on
    ``1..max_components``, the m components are drawn without replacement,
    their weights come from the flat Dirichlet, and i.i.d. zero-mean Gaussian
    noise with standard deviation ``noise_sd`` is added.
    """
    validate_dictionary(dictionary)
    if cfg.max_components > dictionary.N:
        raise ValidationError(f"max_components={cfg.max_components} exceeds N={dictionary.N}")
    return [simulate_one(dictionary, cfg, j) for j in range(cfg.n_observations)]


def true_target(obs: Observation) -> np.ndarray:
    if obs.truth is None:
        raise MissingTruth("observation carries no ground truth")
    return np.array(obs.truth.rho)


def _cross2(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def toy_cloud(n: int = 250, seed: int = 0) -> Dictionary:
    """Two-dimensional point cloud used for comparing prototype geometry.

    Points are uniform inside an irregular convex nonagon with a denser lobe
    near one side, so the cloud has a clear hull and non-uniform density.
    Each point is a "curve" with p=2 and its x coordinate as the parameter.
    """
    rng = np.random.default_rng(seed)
    angles = np.array([0.1, 0.8, 1.5, 2.1, 2.9, 3.6, 4.3, 5.0, 5.7])
    radii = np.array([1.0, 0.85, 1.1, 0.9, 1.2, 0.95, 1.0, 0.8, 1.05])
    poly = np.column_stack([radii * np.cos(angles) * 1.4, radii * np.sin(angles)])
    tri = [(0, i, i + 1) for i in range(1, len(poly) - 1)]
    areas = np.array([abs(_cross2(poly[b] - poly[a], poly[c] - poly[a])) / 2 for a, b, c in tri])
    pts = []
    n_lobe = n // 5
    for _ in range(n - n_lobe):
        a, b, c = tri[rng.choice(len(tri), p=areas / areas.sum())]
        r1, r2 = rng.random(2)
        if r1 + r2 > 1:
            r1, r2 = 1 - r1, 1 - r2
        pts.append(poly[a] + r1 * (poly[b] - poly[a]) + r2 * (poly[c] - poly[a]))
    centre = 0.5 * poly[1]
    for _ in range(n_lobe):
        pts.append(centre + rng.normal(scale=0.12, size=2))
    pts = np.array(pts)
    order = np.argsort(pts[:, 0], kind="stable")
    pts = pts[order]
    return Dictionary(pts.T, pts[:, :1], np.array([0.0, 1.0]), ("x",))
