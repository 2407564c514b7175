"""Command-line entry point: ``protobasis {synth,select,fit,experiment}``.

Exit codes: 0 success, 2 usage or validation error, 3 algorithmic
non-convergence, 4 file I/O error. ``PROTOBASIS_SEED`` overrides any seed
given on the command line or in a config file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, ValidationError
from .eval import (
    ExperimentConfig,
    MethodSpec,
    build_basis,
    estimate_target,
    benchmark_config_path,
    run_experiment,
    write_report,
)
from .mixfit import FitConfig, simplex_fit
from .model import Dictionary, Observation, PrototypeBasis, read_matrix, write_matrix
from .synth import MixtureSimConfig, gaussian_dictionary, simulate_mixtures

EXIT_OK, EXIT_USAGE, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

SELECT_METHODS = ("km", "km-central", "dkm", "uss", "aa", "sss", "grid", "grid-sigma", "grid-log-sigma")


class UsageError(Exception):
    pass


def parse_range(text: str) -> tuple:
    """Parse ``start:stop:step`` into three floats."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(v) for v in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric range {text!r}") from None
    if not step > 0:
        raise argparse.ArgumentTypeError(f"step must be positive in {text!r}")
    return start, stop, step


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def env_seed(seed: int) -> int:
    override = os.environ.get("PROTOBASIS_SEED")
    if override is None or override == "":
        return seed
    try:
        return int(override)
    except ValueError:
        raise UsageError(f"PROTOBASIS_SEED must be an integer, got {override!r}") from None


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def write_manifest(out_dir: Path, argv, seeds: dict, artifacts, inputs=(), started=None) -> None:
    """One ``manifest.json`` per output directory (rewritten on every run)."""
    manifest = {
        "command_line": ["protobasis", *argv],
        "tool_version": __version__,
        "seeds": seeds,
        "artifacts": sorted(str(Path(a).name) for a in artifacts),
        "input_hashes": {str(p): _sha(Path(p)) for p in inputs if Path(p).is_file()},
        "artifact_hashes": {str(Path(a).name): _sha(Path(a)) for a in artifacts},
        "wall_time": None if started is None else time.perf_counter() - started,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


# -- synth --------------------------------------------------------------------

def cmd_synth(args, argv) -> int:
    t0 = time.perf_counter()
    seed = env_seed(args.seed)
    d = gaussian_dictionary(*args.sigma, *args.x)
    cfg = MixtureSimConfig(args.n, args.max_comp, args.noise_sd, seed)
    obs = simulate_mixtures(d, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    d.to_csv(out)
    write_matrix(out / "observations.csv", np.array([o.y for o in obs]))
    rho = np.array([o.truth.rho for o in obs])
    gamma = np.array([o.truth.gamma for o in obs])
    header = [f"rho_{lab}" for lab in d.labels] + [f"gamma_{i}" for i in range(d.N)]
    write_matrix(out / "truth.csv", np.column_stack([rho, gamma]), header)
    files = [out / n for n in ("curves.csv", "params.csv", "observations.csv", "truth.csv")]
    if cfg.noise_sd > 0:
        write_matrix(out / "noise.csv", np.array([o.noise_scale for o in obs]))
        files.append(out / "noise.csv")
    with open(out / "synth.json", "w") as fh:
        json.dump({"sim": cfg.echo(), "sigma": list(args.sigma), "x": list(args.x),
                   "labels": list(d.labels)}, fh, indent=2, sort_keys=True)
    files.append(out / "synth.json")
    write_manifest(out, argv, {"seed": seed}, files, started=t0)
    print(f"wrote N={d.N} curves (p={d.p}) and {len(obs)} observations to {out}")
    return EXIT_OK


# -- select -------------------------------------------------------------------

def load_dictionary_dir(path) -> Dictionary:
    path = Path(path)
    labels = None
    meta = path / "synth.json"
    if meta.is_file():
        with open(meta) as fh:
            labels = json.load(fh).get("labels")
    return Dictionary.from_csv(path, labels)


def cmd_select(args, argv) -> int:
    t0 = time.perf_counter()
    seed = env_seed(args.seed)
    d = load_dictionary_dir(args.dict)
    method = "grid-sigma" if args.method == "grid" else args.method
    options = {}
    if method == "sss":
        if args.k is None and args.lam is None:
            raise UsageError("sss needs --k/--target-k or --lambda")
        if args.lam is not None:
            options["lam"] = args.lam
    elif args.k is None:
        raise UsageError(f"--k is required for method {method}")
    if method == "sss" and args.k is None:
        from .hull import SSSConfig, sss_select
        basis = sss_select(d, SSSConfig(lam=args.lam))
    else:
        basis = build_basis(d, method, args.k, seed, options)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_matrix(out, basis.alpha)
    sidecar = Path(str(out) + ".json")
    echo = {"method": method, "K": basis.K, "seed": seed, "dict": str(args.dict),
            "lambda": args.lam, "dictionary_fingerprint": d.fingerprint}
    payload = {"config_echo": echo, "basis": basis.to_dict(),
               "selected_indices": basis.selected_indices(),
               "diagnostics": _jsonable_diagnostics(basis.diagnostics)}
    with open(sidecar, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    write_manifest(out.parent, argv, {"seed": seed}, [out, sidecar],
                   inputs=[Path(args.dict) / "curves.csv", Path(args.dict) / "params.csv"], started=t0)
    print(f"{method}: K={basis.K} prototypes, parameters {np.round(basis.proto_params[:, 0], 4).tolist()}")
    return EXIT_OK


def _jsonable_diagnostics(diag: dict) -> dict:
    out = {}
    for k, v in diag.items():
        if k in ("B", "beta", "psi", "markov", "all_histories"):
            continue
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, (np.floating, np.integer, np.bool_)):
            v = v.item()
        try:
            json.dumps(v)
        except TypeError:
            continue
        out[k] = v
    return out


# -- fit ----------------------------------------------------------------------

def load_basis(path, dict_dir=None) -> PrototypeBasis:
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    if dict_dir is not None:
        d = load_dictionary_dir(dict_dir)
        tag = "custom"
        if sidecar.is_file():
            with open(sidecar) as fh:
                tag = json.load(fh)["basis"]["method_tag"]
        return PrototypeBasis.from_alpha(d, read_matrix(path), tag)
    if not sidecar.is_file():
        raise UsageError(f"{sidecar} not found; pass --dict to rebuild prototypes from alpha")
    with open(sidecar) as fh:
        basis = PrototypeBasis.from_dict(json.load(fh)["basis"])
    if not np.array_equal(basis.alpha, read_matrix(path)):
        raise ValidationError(f"{path} does not match the alpha stored in {sidecar}")
    return basis


def cmd_fit(args, argv) -> int:
    t0 = time.perf_counter()
    basis = load_basis(args.basis, args.dict)
    Y = read_matrix(args.obs)
    noise = None
    noise_path = Path(args.noise) if args.noise else Path(args.obs).with_name("noise.csv")
    if noise_path.is_file():
        noise = read_matrix(noise_path)
        if noise.shape != Y.shape:
            raise ValidationError(f"noise table {noise.shape} does not match observations {Y.shape}")
    elif args.noise:
        raise FileNotFoundError(noise_path)
    cfg = FitConfig(weight_by_noise=args.weighted)
    rows = []
    for j, y in enumerate(Y):
        fit = simplex_fit(basis, Observation(y, None if noise is None else noise[j]), cfg)
        rho = estimate_target(fit, basis)
        chi = np.nan if fit.chi_square is None else fit.chi_square
        rows.append([fit.scale, *fit.beta, fit.residual_ss, chi, float(fit.zero_fit), *rho])
    d_cols = basis.proto_params.shape[1]
    labels = [f"rho_hat_{i}" for i in range(d_cols)]
    header = ["M", *[f"beta_{k}" for k in range(basis.K)], "residual_ss", "chi_square", "zero_fit", *labels]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_matrix(out, np.array(rows), header)
    inputs = [Path(args.basis), Path(args.obs)] + ([noise_path] if noise is not None else [])
    write_manifest(out.parent, argv, {}, [out], inputs=inputs, started=t0)
    print(f"fitted {len(rows)} observations with K={basis.K}")
    return EXIT_OK


# -- experiment ---------------------------------------------------------------

def cmd_experiment(args, argv) -> int:
    t0 = time.perf_counter()
    config_path = Path(args.config) if args.config else benchmark_config_path()
    with open(config_path) as fh:
        raw = json.load(fh)
    if "methods" in raw and not raw["methods"]:
        raise UsageError("methods list is empty")
    cfg = ExperimentConfig.from_dict(raw)
    changes = {}
    if args.reps is not None:
        changes["n_reps"] = args.reps
    seed = env_seed(args.seed if args.seed is not None else cfg.seed)
    changes["seed"] = seed
    if args.methods:
        changes["methods"] = tuple(MethodSpec(m) for m in args.methods)
    if args.k_values:
        changes["k_values"] = tuple(args.k_values)
    d = cfg.to_dict()
    d.update({k: v for k, v in changes.items() if k != "methods"})
    d["methods"] = [{"method_tag": m.method_tag, "config": m.config}
                    for m in changes.get("methods", cfg.methods)]
    cfg = ExperimentConfig.from_dict(d)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    report = run_experiment(cfg, jobs=jobs, base_dir=config_path.parent)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    write_manifest(out.parent, argv, {"seed": seed}, [out, Path(str(out) + ".json")],
                   inputs=[config_path], started=t0)
    for r in report.rows:
        status = f"FAILED ({r.reason})" if r.failed else f"mean MSE {r.mean_mse:.4f} [{r.band_low:.4f}, {r.band_high:.4f}]"
        print(f"{r.method_tag:>15} K={r.K:<4d} {status}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="protobasis", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"protobasis {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a Gaussian dictionary and simulated observations")
    s.add_argument("--sigma", type=parse_range, default=(0.2, 8.0, 0.05), help="width grid a:b:s")
    s.add_argument("--x", type=parse_range, default=(-6.0, 6.0, 0.0375), help="sample grid a:b:s")
    s.add_argument("--n", type=positive_int, default=100, help="number of observations")
    s.add_argument("--max-comp", type=positive_int, default=5)
    s.add_argument("--noise-sd", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("select", help="choose K prototypes from a dictionary")
    s.add_argument("--method", required=True, choices=SELECT_METHODS)
    s.add_argument("--k", "--target-k", dest="k", type=positive_int)
    s.add_argument("--lambda", dest="lam", type=float, help="SSS penalty (ignored when --k is set)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dict", required=True, help="directory with curves.csv and params.csv")
    s.add_argument("--out", required=True)

    s = sub.add_parser("fit", help="fit observations with a prototype basis")
    s.add_argument("--basis", required=True)
    s.add_argument("--obs", required=True)
    s.add_argument("--dict", help="dictionary directory; rebuilds prototypes from alpha")
    s.add_argument("--noise", help="per-observation noise scales (default: noise.csv next to --obs)")
    s.add_argument("--weighted", action="store_true", help="weight residuals by the noise scale")
    s.add_argument("--out", required=True)

    s = sub.add_parser("experiment", help="Monte-Carlo comparison of selectors")
    s.add_argument("--config", help="experiment JSON (default: bundled benchmark_gaussian.json)")
    s.add_argument("--out", required=True)
    s.add_argument("--reps", type=positive_int)
    s.add_argument("--seed", type=int)
    s.add_argument("--methods", nargs="+", choices=("km", "km-central", "dkm", "uss", "aa", "sss"))
    s.add_argument("--k-values", nargs="+", type=positive_int)
    s.add_argument("--jobs", type=positive_int, help="worker processes (default: all cores)")
    return p


COMMANDS = {"synth": cmd_synth, "select": cmd_select, "fit": cmd_fit, "experiment": cmd_experiment}


RANGE_FLAGS = ("--sigma", "--x")


def _join_ranges(argv: list) -> list:
    """``--x -8:8:0.05`` -> ``--x=-8:8:0.05`` so argparse does not read the value as a flag."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in RANGE_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_ranges(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
