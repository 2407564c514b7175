"""Target-parameter estimation, MSE scoring and the Monte-Carlo experiment harness."""

from __future__ import annotations

import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConvergenceError, DimensionMismatch, LengthMismatch, ProtobasisError, ValidationError
from .hull import AAConfig, SSSConfig, archetypes_select, sss_select
from .mixfit import FitConfig, simplex_fit
from .model import (
    Dictionary,
    ExperimentReport,
    MixtureFit,
    PrototypeBasis,
    ReportRow,
    indicator_alpha,
)
from .quantize import (
    DiffusionConfig,
    KMeansConfig,
    diffusion_kmeans_select,
    kmeans_central_select,
    kmeans_select,
    uss_select,
)
from .synth import MixtureSimConfig, gaussian_dictionary, simulate_mixtures

BAND_PERCENTILES = (16.0, 84.0)
SPACINGS = ("uniform_sigma", "uniform_log_sigma")
GRID_TAGS = {"uniform_sigma": "grid-sigma", "uniform_log_sigma": "grid-log-sigma"}


def estimate_target(fit: MixtureFit, basis: PrototypeBasis) -> np.ndarray:
    """Weight-averaged prototype parameters ``proto_params.T @ beta``."""
    if fit.beta.size != basis.K:
        raise DimensionMismatch(f"fit has {fit.beta.size} weights, basis has K={basis.K}")
    return basis.proto_params.T @ fit.beta


def grid_basis(dictionary: Dictionary, K: int, spacing: str = "uniform_sigma") -> PrototypeBasis:
    """Prototypes on a regular grid of the (single) physical parameter.

    Picks the component nearest to each of K evenly spaced targets over the
    parameter range (log-spaced for ``uniform_log_sigma``); a target whose
    nearest component is already taken gets the nearest unused one.
    """
    if dictionary.d != 1:
        raise ValidationError("grid_basis needs a single parameter column")
    if not 1 <= K <= dictionary.N:
        raise ValidationError(f"K must be in 1..{dictionary.N}, got {K}")
    if spacing not in SPACINGS:
        raise ValidationError(f"unknown spacing {spacing!r}")
    values = dictionary.params[:, 0]
    lo, hi = float(values.min()), float(values.max())
    if spacing == "uniform_sigma":
        coord = values
        targets = np.linspace(lo, hi, K)
    else:
        if lo <= 0:
            raise ValidationError("log spacing needs positive parameter values")
        coord = np.log(values)
        targets = np.linspace(np.log(lo), np.log(hi), K)
    used = np.zeros(dictionary.N, dtype=bool)
    chosen = []
    for t in targets:
        dist = np.abs(coord - t)
        order = np.lexsort((np.arange(dictionary.N), dist))
        pick = next(int(i) for i in order if not used[i])
        used[pick] = True
        chosen.append(pick)
    tag = GRID_TAGS[spacing]
    return PrototypeBasis.from_alpha(
        dictionary, indicator_alpha(dictionary.N, chosen), tag, {"chosen": chosen, "targets": targets.tolist()}
    )


def mse(estimates: Sequence, truths: Sequence) -> np.ndarray:
    """Mean squared error per parameter column."""
    E = np.atleast_1d(np.asarray(estimates, dtype=float))
    T = np.atleast_1d(np.asarray(truths, dtype=float))
    if E.shape[0] != T.shape[0]:
        raise LengthMismatch(f"{E.shape[0]} estimates vs {T.shape[0]} truths")
    if E.shape[0] == 0:
        raise LengthMismatch("need at least one estimate")
    if E.shape != T.shape:
        raise DimensionMismatch(f"estimate shape {E.shape} != truth shape {T.shape}")
    err = (E - T) ** 2
    if err.ndim == 1:
        err = err[:, None]
    return err.mean(axis=0)


# -- basis construction by method tag ------------------------------------------

METHODS = ("km", "km-central", "dkm", "uss", "aa", "sss", "grid-sigma", "grid-log-sigma", "full")


def build_basis(dictionary: Dictionary, method: str, K: int, seed: int = 0,
                options: Optional[dict] = None) -> PrototypeBasis:
    """Build a K-prototype basis with the named selector."""
    opts = dict(options or {})
    if method == "km":
        return kmeans_select(dictionary, KMeansConfig(K, seed=seed, **opts))
    if method == "km-central":
        return kmeans_central_select(dictionary, KMeansConfig(K, seed=seed, **opts))
    if method == "dkm":
        km_opts = {k: opts.pop(k) for k in list(opts) if k in ("max_iter", "tol", "n_restarts")}
        return diffusion_kmeans_select(dictionary, DiffusionConfig(KMeansConfig(K, seed=seed, **km_opts), **opts))
    if method == "uss":
        return uss_select(dictionary, K)
    if method == "aa":
        return archetypes_select(dictionary, AAConfig(K, seed=seed, **opts))
    if method == "sss":
        return sss_select(dictionary, SSSConfig(target_k=K, **opts))
    if method == "grid-sigma":
        return grid_basis(dictionary, K, "uniform_sigma")
    if method == "grid-log-sigma":
        return grid_basis(dictionary, K, "uniform_log_sigma")
    if method == "full":
        return PrototypeBasis.from_alpha(dictionary, np.eye(dictionary.N), "full")
    raise ValidationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


# -- experiment harness -----------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    method_tag: str
    config: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    dictionary_spec: dict = field(default_factory=lambda: {
        "kind": "gaussian", "sigma": [0.2, 8.0, 0.05], "x": [-6.0, 6.0, 0.0375]})
    sim: MixtureSimConfig = MixtureSimConfig()
    methods: tuple = (MethodSpec("km"), MethodSpec("dkm"))
    k_values: tuple = (5, 10, 15, 20, 25, 30)
    grid_baselines: tuple = ("uniform_sigma",)
    full_dictionary_baseline: bool = True
    n_reps: int = 25
    seed: int = 0
    fit: FitConfig = FitConfig()
    target_column: int = 0

    def __post_init__(self):
        if self.n_reps < 1:
            raise ValidationError("n_reps must be >= 1")
        if not self.k_values:
            raise ValidationError("k_values must be non-empty")
        if not self.methods and not self.grid_baselines and not self.full_dictionary_baseline:
            raise ValidationError("nothing to evaluate: no methods, grid baselines or full baseline")
        for m in self.methods:
            if m.method_tag not in METHODS:
                raise ValidationError(f"unknown method {m.method_tag!r}")
        for g in self.grid_baselines:
            if g not in SPACINGS:
                raise ValidationError(f"unknown grid baseline {g!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = [asdict(m) for m in self.methods]
        d["k_values"] = list(self.k_values)
        d["grid_baselines"] = list(self.grid_baselines)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown experiment config keys: {sorted(unknown)}")
        if "sim" in d:
            d["sim"] = MixtureSimConfig(**d["sim"])
        if "fit" in d:
            d["fit"] = FitConfig(**d["fit"])
        if "methods" in d:
            d["methods"] = tuple(
                MethodSpec(m) if isinstance(m, str) else MethodSpec(m["method_tag"], dict(m.get("config", {})))
                for m in d["methods"]
            )
        for key in ("k_values", "grid_baselines"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def benchmark_config_path() -> Path:
    return Path(__file__).parent / "data" / "benchmark_gaussian.json"


def load_dictionary(spec: dict, base_dir: Optional[Path] = None) -> Dictionary:
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        s = spec.get("sigma", [0.2, 8.0, 0.05])
        x = spec.get("x", [-6.0, 6.0, 0.0375])
        return gaussian_dictionary(s[0], s[1], s[2], x[0], x[1], x[2])
    if kind == "csv":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return Dictionary.from_csv(path, spec.get("labels"))
    raise ValidationError(f"unknown dictionary kind {kind!r}")


def _derive_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def rep_seed(seed: int, rep: int) -> int:
    return _derive_seed(seed, 1, rep)


def selector_seed(seed: int, method: str, K: int) -> int:
    return _derive_seed(seed, 2, zlib.crc32(method.encode()), K)


def _cells(cfg: ExperimentConfig, N: int):
    cells = []
    for m in cfg.methods:
        for K in cfg.k_values:
            cells.append((m.method_tag, K, m.config))
    for g in cfg.grid_baselines:
        for K in cfg.k_values:
            cells.append((GRID_TAGS[g], K, {}))
    if cfg.full_dictionary_baseline:
        cells.append(("full", N, {}))
    return cells


def build_bases(dictionary: Dictionary, cfg: ExperimentConfig) -> dict:
    """Build every (method, K) basis once; failures map to their error message."""
    out = {}
    for tag, K, opts in _cells(cfg, dictionary.N):
        t0 = time.perf_counter()
        try:
            if K > dictionary.N:
                raise ValidationError(f"K={K} exceeds N={dictionary.N}")
            basis = build_basis(dictionary, tag, K, selector_seed(cfg.seed, tag, K), opts)
            out[(tag, K)] = (basis, None, time.perf_counter() - t0)
        except (ProtobasisError, ConvergenceError) as exc:
            out[(tag, K)] = (None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0)
    return out


def evaluate_rep(dictionary: Dictionary, bases: dict, cfg: ExperimentConfig, rep: int) -> dict:
    """Simulate one repetition and score every basis; returns ``{(tag, K): mse or error}``."""
    sim = MixtureSimConfig(cfg.sim.n_observations, cfg.sim.max_components, cfg.sim.noise_sd,
                           rep_seed(cfg.seed, rep))
    obs = simulate_mixtures(dictionary, sim)
    truths = np.array([o.truth.rho for o in obs])
    col = cfg.target_column
    out = {}
    for key, (basis, err, _) in bases.items():
        if basis is None:
            continue
        try:
            est = np.array([estimate_target(simplex_fit(basis, o, cfg.fit), basis) for o in obs])
            out[key] = float(mse(est[:, col], truths[:, col])[0])
        except ProtobasisError as exc:
            out[key] = f"{type(exc).__name__}: {exc}"
    return out


_WORKER = {}


def _worker_init(dictionary, bases, cfg):
    _WORKER.update(dictionary=dictionary, bases=bases, cfg=cfg)


def _worker_rep(rep):
    return evaluate_rep(_WORKER["dictionary"], _WORKER["bases"], _WORKER["cfg"], rep)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, dictionary: Optional[Dictionary] = None,
                   base_dir: Optional[Path] = None) -> ExperimentReport:
    """Monte-Carlo comparison of prototype bases for target estimation.

    Bases are built once per (method, K) with seeds derived from
    ``(cfg.seed, method, K)``; each repetition simulates fresh observations
    from a seed derived from ``(cfg.seed, rep)``. A cell whose basis or fit
    fails is reported as failed rather than aborting the sweep. Results do
    not depend on ``jobs``.
    """
    if dictionary is None:
        dictionary = load_dictionary(cfg.dictionary_spec, base_dir)
    bases = build_bases(dictionary, cfg)
    t0 = time.perf_counter()
    if jobs > 1 and cfg.n_reps > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init,
                                 initargs=(dictionary, bases, cfg)) as ex:
            results = list(ex.map(_worker_rep, range(cfg.n_reps)))
    else:
        results = [evaluate_rep(dictionary, bases, cfg, r) for r in range(cfg.n_reps)]
    fit_time = time.perf_counter() - t0

    rows, per_rep = [], {}
    n_cells = max(len(bases), 1)
    for key, (basis, err, build_time) in bases.items():
        tag, K = key
        wall = build_time + fit_time / n_cells
        if basis is None:
            rows.append(ReportRow(tag, K, 0, float("nan"), float("nan"), float("nan"), wall, True, err))
            continue
        vals = [r[key] for r in results]
        errors = [v for v in vals if isinstance(v, str)]
        if errors:
            rows.append(ReportRow(tag, K, 0, float("nan"), float("nan"), float("nan"), wall, True, errors[0]))
            continue
        vals = np.array(vals, dtype=float)
        per_rep[key] = vals.tolist()
        lo, hi = np.percentile(vals, BAND_PERCENTILES)
        rows.append(ReportRow(tag, K, len(vals), float(vals.mean()), float(lo), float(hi), wall))
    echo = cfg.to_dict()
    echo["band_percentiles"] = list(BAND_PERCENTILES)
    echo["mixture_law"] = cfg.sim.echo()["mixture_law"]
    echo["dictionary_fingerprint"] = dictionary.fingerprint
    echo["selector_diagnostics"] = {
        f"{tag}:{K}": _diag_summary(b) for (tag, K), (b, _, _) in bases.items() if b is not None
    }
    return ExperimentReport(tuple(rows), echo, cfg.seed, per_rep)


def _diag_summary(basis: PrototypeBasis) -> dict:
    keep = ("cost", "converged", "epsilon", "n_coords", "rss", "iterations", "lambda")
    out = {k: basis.diagnostics[k] for k in keep if k in basis.diagnostics}
    out["proto_params"] = basis.proto_params[:, 0].tolist()
    return out


REPORT_COLUMNS = ("method", "K", "rep_count", "mean_mse", "band_low", "band_high", "failed", "reason")


def write_report(report: ExperimentReport, path) -> None:
    """CSV report plus a JSON sidecar (``<path>.json``) holding the config echo."""
    import csv

    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.rows:
            w.writerow([r.method_tag, r.K, r.rep_count, repr(r.mean_mse), repr(r.band_low),
                        repr(r.band_high), int(r.failed), r.reason])
    sidecar = {
        "seed": report.seed,
        "config_echo": report.config_echo,
        "wall_time": {f"{r.method_tag}:{r.K}": r.wall_time for r in report.rows},
        "per_rep_mse": {f"{t}:{k}": v for (t, k), v in report.per_rep.items()},
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))
