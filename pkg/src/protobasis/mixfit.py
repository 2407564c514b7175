"""Nonnegative and simplex-constrained least squares, and scaled mixture fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, IterationLimit, MissingNoiseScale, ValidationError
from .model import MixtureFit, Observation, PrototypeBasis

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class FitConfig:
    weight_by_noise: bool = False
    nnls_tol: float = 1e-10
    # None means 3 * K
    max_active_set_iter: Optional[int] = None

    def __post_init__(self):
        if not self.nnls_tol > 0:
            raise ValidationError("nnls_tol must be positive")


def _lstsq(A, b):
    return np.linalg.lstsq(A, b, rcond=None)[0]


def nnls(A, y, tol: float = 1e-10, max_iter: Optional[int] = None, return_iterations=False):
    """Lawson-Hanson active-set solution of ``min ||A w - y||`` subject to ``w >= 0``.

    Parameters
    ----------
    A : array, shape (p, K)
    y : array, shape (p,)
    tol : float
        KKT tolerance relative to ``max|A.T @ y|``. The active-set loop runs
        until no gradient entry exceeds ``min(tol, max(p, K) eps)`` in the
        same units, so the returned solution always satisfies ``tol``.
    max_iter : int, optional
        Cap on least-squares subproblem solves (default ``3 * K``).

    Returns
    -------
    w : ndarray, shape (K,)
        The solution. With ``return_iterations=True`` a ``(w, n_solves)``
        tuple is returned instead.

    Raises
    ------
    IterationLimit
        When the active-set loop needs more than ``max_iter`` solves.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != y.size:
        raise DimensionMismatch(f"A has shape {A.shape}, y has length {y.size}")
    p, K = A.shape
    if max_iter is None:
        max_iter = 3 * K
    Aty = A.T @ y
    # iterate down to a rounding floor, as Lawson-Hanson does; the result then
    # also meets the KKT conditions at the (looser) requested tol
    floor = min(tol, max(p, K) * np.finfo(float).eps)
    thresh = floor * max(np.max(np.abs(Aty), initial=0.0), _TINY)

    w = np.zeros(K)
    passive = np.zeros(K, dtype=bool)
    blocked = np.zeros(K, dtype=bool)
    g = Aty.copy()  # negative gradient A.T (y - A w)
    n_solves = 0
    while True:
        cand = ~passive & ~blocked & (g > thresh)
        if not cand.any():
            break
        j = int(np.argmax(np.where(cand, g, -np.inf)))
        passive[j] = True
        first = True
        while True:
            n_solves += 1
            if n_solves > max_iter:
                raise IterationLimit(f"NNLS exceeded {max_iter} active-set iterations")
            z = np.zeros(K)
            z[passive] = _lstsq(A[:, passive], y)
            if first and z[j] <= 0:
                # rounding made the entering column useless; skip it until w changes
                passive[j] = False
                blocked[j] = True
                break
            first = False
            if np.all(z[passive] > 0):
                w = z
                blocked[:] = False
                break
            w = _step_back(w, z, passive)
            passive &= w > 0
            blocked[:] = False
        g = A.T @ (y - A @ w)
    w[w < 0] = 0.0
    if return_iterations:
        return w, n_solves
    return w


def kkt_violation(A, y, w, tol: float = 1e-10) -> float:
    """Largest NNLS KKT violation of ``w``, in units of ``tol * max|A.T y|``.

    A value <= 1 means the KKT conditions hold at ``tol``.
    """
    A = np.asarray(A, dtype=float)
    scale = tol * max(np.max(np.abs(A.T @ y), initial=0.0), _TINY)
    grad = A.T @ (A @ w - y)
    pos = w > 0
    v = np.zeros_like(grad)
    v[pos] = np.abs(grad[pos])
    v[~pos] = np.maximum(-grad[~pos], 0.0)
    if np.any(w < 0):
        return np.inf
    return float(np.max(v, initial=0.0) / scale)


def simplex_lstsq(A, b, tol: float = 1e-12, max_iter: Optional[int] = None, init=None):
    """Solve ``min ||A w - b||`` subject to ``w >= 0`` and ``sum(w) == 1``.

    Primal active-set method in the spirit of Lawson-Hanson: starts from the
    best single column (or from the feasible point ``init``) and adds the
    column whose reduced gradient most violates optimality, stepping back
    whenever the equality-constrained subproblem leaves the feasible set.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.size:
        raise DimensionMismatch(f"A has shape {A.shape}, b has length {b.size}")
    K = A.shape[1]
    if max_iter is None:
        max_iter = 3 * K + 30
    if K == 1:
        return np.ones(1)
    blocked = np.zeros(K, dtype=bool)
    scale = max(np.max(np.abs(A.T @ b), initial=0.0), np.max(np.sum(A * A, axis=0)), _TINY)
    thresh = tol * scale
    n_solves = 0
    if init is not None and np.all(np.asarray(init) >= 0) and np.sum(init) > 0:
        w = np.asarray(init, dtype=float) / np.sum(init)
        passive = w > 0
        # move to the optimum on the warm-start support before pricing new columns
        while True:
            n_solves += 1
            if n_solves > max_iter:
                raise IterationLimit(f"simplex least squares exceeded {max_iter} iterations")
            z = _affine_lstsq(A, b, passive)
            if np.all(z[passive] > 0):
                w = z
                break
            w = _step_back(w, z, passive)
            passive &= w > 0
            w /= w.sum()
    else:
        j0 = int(np.argmin(np.sum((A - b[:, None]) ** 2, axis=0)))
        w = np.zeros(K)
        w[j0] = 1.0
        passive = w > 0
    while True:
        g = A.T @ (b - A @ w)
        nu = np.max(g[passive])
        cand = ~passive & ~blocked & (g - nu > thresh)
        if not cand.any():
            break
        j = int(np.argmax(np.where(cand, g, -np.inf)))
        passive[j] = True
        first = True
        while True:
            n_solves += 1
            if n_solves > max_iter:
                raise IterationLimit(f"simplex least squares exceeded {max_iter} iterations")
            z = _affine_lstsq(A, b, passive)
            if first and z[j] <= 0:
                passive[j] = False
                blocked[j] = True
                break
            first = False
            if np.all(z[passive] > 0):
                w = z
                blocked[:] = False
                break
            w = _step_back(w, z, passive)
            passive &= w > 0
            w /= w.sum()
            blocked[:] = False
    w[w < 0] = 0.0
    return w / w.sum()


def _affine_lstsq(A, b, passive):
    """Least squares over the affine hull of the passive columns (sum of weights 1)."""
    idx = np.flatnonzero(passive)
    z = np.zeros(A.shape[1])
    if idx.size == 1:
        z[idx[0]] = 1.0
        return z
    ref = idx[0]
    rest = idx[1:]
    D = A[:, rest] - A[:, [ref]]
    u = _lstsq(D, b - A[:, ref])
    z[rest] = u
    z[ref] = 1.0 - u.sum()
    return z


def _step_back(w, z, passive):
    """Move from feasible ``w`` toward ``z`` until the first passive entry hits zero."""
    neg = np.flatnonzero(passive & (z <= 0))
    ratios = w[neg] / (w[neg] - z[neg])
    i = int(np.argmin(ratios))
    w = w + ratios[i] * (z - w)
    w[neg[i]] = 0.0
    w[~passive] = 0.0
    w[w < 0] = 0.0
    return w


def chi_square(obs: Observation, model) -> float:
    """Sum of squared standardized residuals ``((y - model) / noise_scale)**2``."""
    if obs.noise_scale is None:
        raise MissingNoiseScale("chi-square needs a per-coordinate noise scale")
    model = np.asarray(model, dtype=float).reshape(-1)
    if model.size != obs.p:
        raise DimensionMismatch(f"model length {model.size} != observation length {obs.p}")
    return float(np.sum(((obs.y - model) / obs.noise_scale) ** 2))


def simplex_fit(basis: PrototypeBasis, obs: Observation, cfg: FitConfig = FitConfig()) -> MixtureFit:
    """Fit ``y ~ M * prototypes @ beta`` with ``M >= 0`` and beta on the simplex.

    Solved exactly by nonnegative least squares on the prototype columns
    followed by ``M = sum(w)`` and ``beta = w / M``. A zero solution gives
    ``M = 0``, uniform beta and ``zero_fit=True``.
    """
    psi = basis.prototypes
    if psi.shape[0] != obs.p:
        raise DimensionMismatch(f"basis has p={psi.shape[0]}, observation has p={obs.p}")
    A, y = psi, obs.y
    if cfg.weight_by_noise and obs.noise_scale is not None:
        # relative weights: a constant noise scale gives weights of exactly 1
        wts = np.min(obs.noise_scale) / obs.noise_scale
        A = psi * wts[:, None]
        y = obs.y * wts
    w, iters = nnls(A, y, cfg.nnls_tol, cfg.max_active_set_iter, return_iterations=True)
    M = float(w.sum())
    K = basis.K
    if M > 0:
        beta = w / M
        beta = beta / beta.sum()
        zero = False
    else:
        M = 0.0
        beta = np.full(K, 1.0 / K)
        zero = True
    model = M * (psi @ beta)
    resid = float(np.sum((obs.y - model) ** 2))
    chi = chi_square(obs, model) if obs.noise_scale is not None else None
    return MixtureFit(beta, M, resid, chi, iters, zero)


def fit_many(basis: PrototypeBasis, observations, cfg: FitConfig = FitConfig()) -> list:
    return [simplex_fit(basis, o, cfg) for o in observations]
