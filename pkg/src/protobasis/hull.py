"""Convex-hull oriented selectors: archetypal analysis and sparse subset selection.

Both keep every prototype inside the convex hull of the dictionary. The
:func:`guard_nonphysical` check detects candidate bases (for example from
unconstrained sparse coding or NMF) that leave it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import NonConvergence, NotConverged, TargetKUnreachable, ValidationError
from .mixfit import simplex_lstsq
from .model import Dictionary, PrototypeBasis, indicator_alpha, validate_dictionary
from .quantize import _check_distinct, pairwise_sq_dists

ROW_ACTIVE = 1e-6
GUARD_RTOL = 1e-6


@dataclass(frozen=True)
class AAConfig:
    K: int
    max_iter: int = 3000
    tol: float = 1e-6
    seed: int = 0
    n_restarts: int = 1
    # beta is treated as rank deficient below this relative singular value
    rank_tol: float = 1e-10

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise ValidationError("max_iter and n_restarts must be >= 1")


def _fit_weights(Z, X, beta_old=None, n_inner=100):
    """Simplex weights of every column of X on the archetypes Z (K x N).

    Without a warm start each column is solved exactly by the active-set
    solver. With one, all columns take accelerated projected-gradient steps
    together and a column keeps its old weights unless the new ones fit
    strictly better.
    """
    K, N = Z.shape[1], X.shape[1]
    if beta_old is None:
        return np.column_stack([simplex_lstsq(Z, X[:, i]) for i in range(N)])
    ZtZ = Z.T @ Z
    ZtX = Z.T @ X
    L = 2.0 * max(np.linalg.eigvalsh(ZtZ)[-1], 1e-300)

    def col_loss(B):
        return np.sum((X - Z @ B) ** 2, axis=0)

    best, f_best = beta_old.copy(), col_loss(beta_old)
    y, t, prev = best, 1.0, best
    for _ in range(n_inner):
        cand = project_simplex_columns(y - 2.0 * (ZtZ @ y - ZtX) / L)
        f_new = col_loss(cand)
        better = f_new < f_best
        best = np.where(better, cand, best)
        f_best = np.where(better, f_new, f_best)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = best + (t / t_new) * (cand - best) + ((t - 1.0) / t_new) * (best - prev)
        prev, t = best, t_new
    return best


def _rss(X, Z, beta):
    return float(np.sum((X - Z @ beta) ** 2))


def _archetype_step(X, E, a, beta, n_inner=200):
    """Archetype update for fixed weights: projected accelerated gradient over the hull.

    Minimizes ``||X - E a beta||^2`` over ``a`` with columns on the simplex,
    warm-started at the current ``a`` and projecting onto the feasible set
    at every step. Only improving iterates are kept, so the RSS never rises.
    """
    EtE = E.T @ E
    EtXb = E.T @ (X @ beta.T)
    BBt = beta @ beta.T
    L = 2.0 * max(np.linalg.eigvalsh(EtE)[-1] * np.linalg.eigvalsh(BBt)[-1], 1e-300)

    def f(a_):
        return _rss(X, E @ a_, beta)

    best, f_best = a, f(a)
    y, t, a_prev = a, 1.0, a
    for _ in range(n_inner):
        grad = 2.0 * (EtE @ y @ BBt - EtXb)
        a_new = project_simplex_columns(y - grad / L)
        if np.max(np.abs(a_new - y)) < 1e-13:
            break
        f_new = f(a_new)
        if f_new < f_best:
            best, f_best = a_new, f_new
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # monotone variant: extrapolate from the best point seen so far
        y = best + (t / t_new) * (a_new - best) + ((t - 1.0) / t_new) * (best - a_prev)
        a_prev, t = best, t_new
    return best


def furthest_sum(Z: np.ndarray, K: int, rng: np.random.Generator, candidates=None) -> list:
    """Greedy max-sum-of-distances seeding; the random start point is swapped out at the end."""
    N = Z.shape[0]
    pool = np.arange(N) if candidates is None else np.asarray(candidates)
    D = np.sqrt(pairwise_sq_dists(Z))
    start = int(pool[rng.integers(pool.size)])
    chosen = [start]
    total = D[start].copy()
    allowed = np.zeros(N, dtype=bool)
    allowed[pool] = True
    while len(chosen) < K + 1 and len(chosen) < pool.size:
        score = np.where(allowed & ~np.isin(np.arange(N), chosen), total, -np.inf)
        nxt = int(np.argmax(score))
        chosen.append(nxt)
        total += D[nxt]
    rest = chosen[1:]
    if len(rest) < K:
        rest = [start] + rest
    return rest[:K]


def extreme_points(X: np.ndarray, rtol: float = 1e-9) -> list:
    """Indices of columns of X that are not convex combinations of the other columns.

    These are the vertices of the convex hull; duplicated columns count once.
    """
    N = X.shape[1]
    scale = float(np.max(np.linalg.norm(X, axis=0))) or 1.0
    out = []
    for i in range(N):
        others = np.delete(X, i, axis=1)
        if others.shape[1] == 0:
            out.append(i)
            continue
        a = simplex_lstsq(others, X[:, i])
        if np.linalg.norm(others @ a - X[:, i]) > rtol * scale:
            out.append(i)
    return out


def _aa_run(X, ext, cfg, rng):
    """One alternating run; archetypes are mixtures of the hull vertices ``X[:, ext]``."""
    N = X.shape[1]
    K = cfg.K
    E = X[:, ext]
    pos = {j: n for n, j in enumerate(ext)}
    a = np.zeros((len(ext), K))
    for k, j in enumerate(furthest_sum(X.T, K, rng, ext)):
        a[pos[j], k] = 1.0
    Z = E @ a
    beta = _fit_weights(Z, X)
    history = [_rss(X, Z, beta)]
    scale = float(np.sum(X ** 2)) or 1.0
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iter + 1):
        a_new = _archetype_step(X, E, a, beta)
        Z_new = E @ a_new
        beta_new = _fit_weights(Z_new, X, beta)
        rss = _rss(X, Z_new, beta_new)
        if rss > history[-1]:
            # only possible through rounding: keep the previous iterate and stop
            converged = True
            break
        a, Z, beta = a_new, Z_new, beta_new
        history.append(rss)
        if history[-1] <= 1e-14 * scale or history[-2] - history[-1] <= cfg.tol * history[-2]:
            converged = True
            break
    alpha = np.zeros((N, K))
    alpha[ext] = np.maximum(a, 0.0)
    alpha /= alpha.sum(axis=0)
    sv = np.linalg.svd(beta, compute_uv=False)
    rank = int(np.sum(sv > cfg.rank_tol * sv[0])) if sv.size else 0
    return alpha, beta, history, converged, iters, rank


def archetypes_select(dictionary: Dictionary, cfg: AAConfig) -> PrototypeBasis:
    """Archetypal analysis by alternating constrained least squares.

    Alternates between the simplex weights of every component on the current
    archetypes and an archetype update restricted to the dictionary's convex
    hull. Both half-steps only accept improvements, so the RSS history is
    nonincreasing. Archetypes are parameterized by the hull vertices only,
    which spans the same feasible set as the full dictionary.

    Raises
    ------
    NonConvergence
        If K exceeds the number of hull vertices (the extra archetypes have
        nowhere to go and the weight system becomes degenerate), or if every
        restart ends with a rank-deficient weight matrix.
    """
    validate_dictionary(dictionary)
    X = dictionary.curves
    if cfg.K > dictionary.N:
        raise NonConvergence(cfg.K, f"K={cfg.K} exceeds N={dictionary.N}")
    _check_distinct(X.T, cfg.K)
    ext = extreme_points(X)
    if cfg.K > len(ext):
        raise NonConvergence(
            cfg.K, f"K={cfg.K} exceeds the {len(ext)} vertices of the convex hull", rank=len(ext))
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts)
    good, ranks = [], []
    for r, ss in enumerate(streams):
        alpha, beta, hist, conv, iters, rank = _aa_run(X, ext, cfg, np.random.default_rng(ss))
        ranks.append(rank)
        if rank == cfg.K:
            good.append((hist[-1], r, alpha, beta, hist, conv, iters))
    if not good:
        raise NonConvergence(cfg.K, rank=max(ranks))
    rss, r, alpha, beta, hist, conv, iters = min(good, key=lambda t: (t[0], t[1]))
    info = {
        "rss": rss,
        "rss_history": hist,
        "converged": conv,
        "iterations": iters,
        "restart": r,
        "n_hull_vertices": len(ext),
        "beta": beta,
        "config": asdict(cfg),
    }
    return PrototypeBasis.from_alpha(dictionary, alpha, "aa", info)


@dataclass(frozen=True)
class SSSConfig:
    lam: float = 1e-3
    q: int = 2
    max_iter: int = 100000
    tol: float = 1e-8
    target_k: Optional[int] = None
    max_bisect: int = 50
    # "admm" (default) or "pg", the monotone accelerated proximal gradient
    solver: str = "admm"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError("lambda must be positive")
        if self.q != 2:
            raise ValidationError("only q=2 is supported")
        if self.target_k is not None and self.target_k < 1:
            raise ValidationError("target_k must be >= 1")
        if self.solver not in ("admm", "pg"):
            raise ValidationError(f"unknown SSS solver {self.solver!r}")


def project_simplex_columns(V: np.ndarray) -> np.ndarray:
    """Euclidean projection of every column of V onto the probability simplex."""
    n, m = V.shape
    U = -np.sort(-V, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    ind = np.arange(1, n + 1)[:, None]
    cond = U - css / ind > 0
    rho = n - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(m)] / (rho + 1)
    return np.maximum(V - theta, 0.0)


def row_shrink(V: np.ndarray, t: float) -> np.ndarray:
    """Group soft-threshold of every row of V by its l2 norm."""
    norms = np.linalg.norm(V, axis=1)
    factor = np.maximum(0.0, 1.0 - t / np.maximum(norms, 1e-300))
    return V * factor[:, None]


def _prox(V, t, max_inner=100000, tol=1e-14):
    """prox of ``t * sum_i ||row_i|| + indicator(columns on the simplex)``.

    Dykstra alternation of row shrinkage and column projection; the result
    is always a column projection, so it is exactly feasible.
    """
    x = V
    P = np.zeros_like(V)
    Q = np.zeros_like(V)
    for _ in range(max_inner):
        y = row_shrink(x + P, t)
        P = x + P - y
        x_new = project_simplex_columns(y + Q)
        Q = y + Q - x_new
        done = np.max(np.abs(x_new - x)) <= tol
        x = x_new
        if done:
            break
    return x


def sss_objective(X: np.ndarray, B: np.ndarray, lam: float) -> float:
    """``||X - X B||_F^2 / (2N) + lam * sum_i ||B[i]||_2``."""
    N = X.shape[1]
    return float(np.sum((X - X @ B) ** 2) / (2.0 * N) + lam * np.sum(np.linalg.norm(B, axis=1)))


@dataclass
class SSSState:
    """Solver state reused to warm-start a nearby lambda."""

    B: np.ndarray
    U: Optional[np.ndarray] = None
    rho: Optional[float] = None


def sss_solve(X: np.ndarray, lam: float, max_iter: int = 100000, tol: float = 1e-8,
              warm: Optional[SSSState] = None, check_every: int = 100, window: int = 10):
    """ADMM for the row-sparse self-representation.

    Minimizes ``||X - X B||_F^2 / (2N) + lam * sum_i ||B[i]||_2`` over
    nonnegative B whose columns sum to one. One block takes the quadratic
    term together with the column sums (an exact linear solve), the other
    the nonnegative group soft-threshold of the rows. Every ``check_every``
    iterations the objective of the column-normalized iterate is recorded;
    the run stops once it changed by less than ``tol`` (relative) over the
    last ``window`` records and the two blocks agree to 1e-7.

    Returns ``(B, history, converged, state)``; B is exactly feasible.
    """
    N = X.shape[1]
    G = X.T @ X / N
    w, V = np.linalg.eigh(G)
    w = np.maximum(w, 0.0)
    # empirical choice; residual balancing drove rho far too high on smooth dictionaries
    rho = 0.025 * np.sqrt(lam * max(float(w[-1]), 1e-300))
    if warm is not None and warm.U is not None:
        # U is the dual scaled by 1/rho
        Z, U = warm.B.copy(), warm.U * (float(warm.rho) / rho)
    else:
        Z = np.eye(N) if warm is None else warm.B.copy()
        U = np.zeros((N, N))
    relax = 1.6
    Hi = (V / (w + rho)) @ V.T
    h1 = Hi.sum(axis=1)
    s = float(h1.sum())
    HG = Hi @ G

    def feasible(M):
        return M / np.maximum(M.sum(axis=0), 1e-300)

    history = [sss_objective(X, feasible(Z), lam)]
    converged = False
    B = Z
    for it in range(1, max_iter + 1):
        R = HG + rho * (Hi @ (Z - U))
        B = R - np.outer(h1, (R.sum(axis=0) - 1.0) / s)
        Bh = relax * B + (1.0 - relax) * Z
        Z = row_shrink(np.maximum(Bh + U, 0.0), lam / rho)
        U += Bh - Z
        if it % check_every == 0:
            history.append(sss_objective(X, feasible(Z), lam))
            if len(history) > window:
                ref = history[-1 - window]
                rel = abs(ref - history[-1]) / max(abs(history[-1]), 1e-300)
                if rel < tol and np.max(np.abs(B - Z)) < 1e-7:
                    converged = True
                    break
    return feasible(Z), history, converged, SSSState(Z, U, rho)


def sss_solve_pg(X: np.ndarray, lam: float, max_iter: int = 20000, tol: float = 1e-8, B0=None):
    """Monotone accelerated proximal gradient for the same problem.

    Each step is a gradient step on the quadratic term followed by the
    exact proximal map of the row penalty plus the column simplex
    constraint. Trial points that raise the objective are rejected, so
    the recorded objective never increases. Much slower than
    :func:`sss_solve` on ill-conditioned dictionaries.

    Returns ``(B, history, converged)``.
    """
    N = X.shape[1]
    G = X.T @ X
    L = max(float(np.linalg.eigvalsh(G)[-1]) / N, 1e-300)
    B = project_simplex_columns(np.eye(N) if B0 is None else np.array(B0, dtype=float))
    F = sss_objective(X, B, lam)
    history = [F]
    Yk, t = B.copy(), 1.0
    small = 0
    converged = False
    for _ in range(max_iter):
        grad = G @ (Yk - np.eye(N)) / N
        Zk = _prox(Yk - grad / L, lam / L)
        Fz = sss_objective(X, Zk, lam)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if Fz <= F:
            B_new, F_new = Zk, Fz
        else:
            B_new, F_new = B, F
        Yk = B_new + (t / t_new) * (Zk - B_new) + ((t - 1.0) / t_new) * (B_new - B)
        rel = (F - F_new) / max(abs(F), 1e-300)
        B, F, t = B_new, F_new, t_new
        history.append(F)
        small = small + 1 if rel < tol and np.max(np.abs(Zk - B)) < 1e-7 else 0
        if small >= 5:
            converged = True
            break
    return B, history, converged


def selected_rows(B: np.ndarray, threshold: float = ROW_ACTIVE) -> list:
    return [int(i) for i in np.flatnonzero(np.linalg.norm(B, axis=1) > threshold)]


def _solve(X, lam, cfg, warm=None):
    if cfg.solver == "pg":
        B, hist, conv = sss_solve_pg(X, lam, cfg.max_iter, cfg.tol, None if warm is None else warm.B)
        state = SSSState(B)
    else:
        B, hist, conv, state = sss_solve(X, lam, cfg.max_iter, cfg.tol, warm)
    if not conv:
        raise NotConverged(f"SSS did not converge in {cfg.max_iter} iterations at lambda={lam:.6g}")
    return B, hist, state


def sss_select(dictionary: Dictionary, cfg: SSSConfig) -> PrototypeBasis:
    """Sparse subset selection with a row-wise l1/l2 penalty.

    Prototypes are the dictionary columns whose rows of the self-representation
    matrix B have l2 norm above 1e-6. With ``cfg.target_k`` set, lambda is
    bisected on a log scale until exactly that many rows are selected.

    Raises
    ------
    NotConverged
        If the solver does not settle within ``max_iter``.
    TargetKUnreachable
        If bisection cannot hit ``target_k``.
    """
    validate_dictionary(dictionary)
    X = dictionary.curves
    _check_distinct(X.T, 1)
    if cfg.target_k is None:
        B, hist, _ = _solve(X, cfg.lam, cfg)
        lam = cfg.lam
        ladder = [(lam, len(selected_rows(B)))]
    else:
        B, hist, lam, ladder = _bisect_lambda(X, cfg)
    chosen = selected_rows(B)
    info = {"lambda": lam, "objective_history": hist, "B": B, "ladder": ladder,
            "config": asdict(cfg)}
    return PrototypeBasis.from_alpha(dictionary, indicator_alpha(dictionary.N, chosen), "sss", info)


def _bisect_lambda(X, cfg):
    """Geometric bisection on lambda for exactly ``cfg.target_k`` selected rows."""
    target = cfg.target_k
    N = X.shape[1]
    if target > N:
        raise TargetKUnreachable(target, N, cfg.lam)
    cache = {}

    def run(lam):
        warm = None
        if cache:
            near = min(cache, key=lambda v: (abs(np.log(v / lam)), v))
            warm = cache[near][2]
        B, hist, state = _solve(X, lam, cfg, warm)
        cache[lam] = (B, hist, state, len(selected_rows(B)))
        return cache[lam][3]

    def found(lam):
        return cache[lam][0], cache[lam][1], lam, _ladder(cache)

    steps = 0
    lo = hi = cfg.lam
    k = run(lo)
    while k < target and steps < cfg.max_bisect:
        lo /= 10.0
        k = run(lo)
        steps += 1
    if k == target:
        return found(lo)
    k = cache[hi][3]
    while k > target and steps < cfg.max_bisect:
        hi *= 10.0
        k = run(hi)
        steps += 1
    if k == target:
        return found(hi)
    while steps < cfg.max_bisect:
        above = [lam for lam, v in cache.items() if v[3] > target]
        below = [lam for lam, v in cache.items() if v[3] < target]
        if not above or not below:
            break
        lo, hi = max(above), min(below)
        if lo >= hi:
            break
        mid = float(np.sqrt(lo * hi))
        steps += 1
        if run(mid) == target:
            return found(mid)
    k_near, lam_near = _nearest(cache, target)
    raise TargetKUnreachable(target, k_near, lam_near)


def _ladder(cache):
    return sorted((lam, v[3]) for lam, v in cache.items())


def _nearest(cache, target):
    """(count, lambda) closest to the target count; ties go to the smaller lambda."""
    _, lam, k = min((abs(v[3] - target), lam, v[3]) for lam, v in cache.items())
    return k, lam


@dataclass
class GuardReport:
    ok: bool
    residuals: np.ndarray  # relative distance of each candidate to the hull
    violations: list = field(default_factory=list)


def guard_nonphysical(candidates, dictionary: Dictionary, rtol: float = GUARD_RTOL) -> GuardReport:
    """Check that every candidate prototype is a convex combination of dictionary curves.

    Each column of ``candidates`` is fitted by simplex-constrained least
    squares on the dictionary; a relative residual above ``rtol`` is a
    violation. Violations are reported, not raised.
    """
    C = np.asarray(candidates, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    X = dictionary.curves
    if C.shape[0] != X.shape[0]:
        raise ValidationError(f"candidates have p={C.shape[0]}, dictionary has p={X.shape[0]}")
    res = np.empty(C.shape[1])
    for k in range(C.shape[1]):
        a = simplex_lstsq(X, C[:, k])
        err = float(np.linalg.norm(X @ a - C[:, k]))
        res[k] = err / max(float(np.linalg.norm(C[:, k])), float(np.max(np.linalg.norm(X, axis=0))))
    viol = [int(k) for k in np.flatnonzero(res > rtol)]
    return GuardReport(not viol, res, viol)


def hull_boundary_distance(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Distance from each query row to the boundary of the convex hull of ``points`` rows.

    Queries outside the hull get the (positive) distance to the nearest
    supporting hyperplane, an underestimate that is exact in 2-D for most
    positions; queries in this package always lie inside.
    """
    from scipy.spatial import ConvexHull

    hull = ConvexHull(points)
    A, b = hull.equations[:, :-1], hull.equations[:, -1]
    signed = queries @ A.T + b  # <= 0 inside, unit outward normals
    inside = np.all(signed <= 1e-12, axis=1)
    return np.where(inside, np.min(-signed, axis=1), np.max(signed, axis=1))
