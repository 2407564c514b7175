"""Core data types: component dictionaries, prototype bases, observations and fits.

All types are frozen dataclasses holding read-only numpy arrays, so they can be
shared freely between worker processes and threads.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InconsistentBasis,
    NonFiniteEntry,
    NonMonotoneGrid,
    ShapeMismatch,
    ValidationError,
)

SIMPLEX_ATOL = 1e-10
RESIDUAL_RTOL = 1e-8


def _frozen(a, ndim=None) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if ndim == 1:
        arr = arr.reshape(-1)
    elif ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


def _first_nonfinite(a: np.ndarray):
    bad = np.argwhere(~np.isfinite(a))
    return tuple(int(i) for i in bad[0]) if len(bad) else None


def fingerprint(*arrays: np.ndarray) -> str:
    """Short sha256 digest of the raw bytes and shapes of ``arrays``."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=float)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Dictionary:
    """A p x N matrix of component curves with their physical parameters.

    Parameters
    ----------
    curves : array, shape (p, N)
        Column ``i`` is the component curve ``X_i``.
    params : array, shape (N, d)
        Row ``i`` holds the physical parameters of component ``i``. A 1-D
        array is promoted to a single column.
    sample_grid : array, shape (p,)
        Abscissa on which every curve is sampled.
    labels : sequence of str, optional
        Names of the parameter columns.
    """

    curves: np.ndarray
    params: np.ndarray
    sample_grid: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "curves", _frozen(self.curves, 2))
        object.__setattr__(self, "params", _frozen(self.params, 2))
        object.__setattr__(self, "sample_grid", _frozen(self.sample_grid, 1))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    @property
    def p(self) -> int:
        return self.curves.shape[0]

    @property
    def N(self) -> int:
        return self.curves.shape[1]

    @property
    def d(self) -> int:
        return self.params.shape[1]

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.curves, self.params, self.sample_grid)

    def subset(self, indices: Sequence[int]) -> "Dictionary":
        idx = np.asarray(indices, dtype=int)
        return Dictionary(self.curves[:, idx], self.params[idx], self.sample_grid, self.labels)

    def to_dict(self) -> dict:
        return {
            "curves": self.curves.tolist(),
            "params": self.params.tolist(),
            "sample_grid": self.sample_grid.tolist(),
            "labels": None if self.labels is None else list(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dictionary":
        return cls(np.array(d["curves"], dtype=float), np.array(d["params"], dtype=float),
                   np.array(d["sample_grid"], dtype=float), d.get("labels"))

    def to_csv(self, directory) -> None:
        """Write ``curves.csv`` (grid in column 0) and ``params.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_matrix(directory / "curves.csv", np.column_stack([self.sample_grid, self.curves]))
        write_matrix(directory / "params.csv", self.params)

    @classmethod
    def from_csv(cls, directory, labels=None) -> "Dictionary":
        directory = Path(directory)
        table = read_matrix(directory / "curves.csv")
        params = read_matrix(directory / "params.csv")
        if table.shape[1] < 2:
            raise ShapeMismatch("curves.csv needs a grid column and at least one component")
        dictionary = cls(table[:, 1:], params, table[:, 0], labels)
        validate_dictionary(dictionary)
        return dictionary


def validate_dictionary(dictionary: Dictionary) -> None:
    """Check every :class:`Dictionary` invariant, raising on the first violation.

    Raises
    ------
    NonFiniteEntry, ShapeMismatch, NonMonotoneGrid
        The message names the offending index.
    """
    curves, params, grid = dictionary.curves, dictionary.params, dictionary.sample_grid
    p, N = curves.shape
    if N < 1 or p < 1:
        raise ShapeMismatch(f"curves must be non-empty, got shape {curves.shape}")
    if params.shape[0] != N:
        raise ShapeMismatch(
            f"params has {params.shape[0]} rows but there are {N} curves "
            f"(first unmatched row index {min(params.shape[0], N)})"
        )
    if params.shape[1] < 1:
        raise ShapeMismatch("params needs at least one column")
    if grid.shape[0] != p:
        raise ShapeMismatch(f"sample_grid has length {grid.shape[0]}, curves have {p} rows")
    for name, arr in (("curves", curves), ("params", params), ("sample_grid", grid)):
        bad = _first_nonfinite(arr)
        if bad is not None:
            raise NonFiniteEntry(f"{name}{list(bad)} is not finite")
    steps = np.diff(grid)
    if np.any(steps <= 0):
        i = int(np.argmax(steps <= 0))
        raise NonMonotoneGrid(f"sample_grid not strictly increasing at index {i + 1}")
    if dictionary.labels is not None and len(dictionary.labels) != params.shape[1]:
        raise ShapeMismatch(f"{len(dictionary.labels)} labels for {params.shape[1]} parameter columns")


@dataclass(frozen=True, eq=False)
class PrototypeBasis:
    """K prototypes ``Psi = X @ alpha`` built from a dictionary.

    Use :meth:`from_alpha` to build one; the plain constructor re-checks that
    any precomputed ``prototypes`` / ``proto_params`` agree with ``alpha``.
    ``diagnostics`` carries selector-specific run information (cost
    histories, convergence flags) and takes no part in the invariants.
    """

    alpha: np.ndarray
    prototypes: np.ndarray
    proto_params: np.ndarray
    method_tag: str
    source_fingerprint: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha, 2))
        object.__setattr__(self, "prototypes", _frozen(self.prototypes, 2))
        object.__setattr__(self, "proto_params", _frozen(self.proto_params, 2))
        check_alpha(self.alpha)
        N, K = self.alpha.shape
        if self.prototypes.shape[1] != K or self.proto_params.shape[0] != K:
            raise ShapeMismatch(
                f"alpha has {K} columns but prototypes {self.prototypes.shape} "
                f"and proto_params {self.proto_params.shape} disagree"
            )

    @classmethod
    def from_alpha(cls, dictionary: Dictionary, alpha, method_tag: str, diagnostics=None,
                   prototypes=None, proto_params=None) -> "PrototypeBasis":
        alpha = np.array(alpha, dtype=float)
        if alpha.ndim != 2 or alpha.shape[0] != dictionary.N:
            raise ShapeMismatch(f"alpha must have {dictionary.N} rows, got shape {alpha.shape}")
        check_alpha(alpha)
        psi = dictionary.curves @ alpha
        pp = alpha.T @ dictionary.params
        if prototypes is not None:
            prototypes = np.asarray(prototypes, dtype=float)
            if prototypes.shape != psi.shape or np.max(np.abs(prototypes - psi)) > SIMPLEX_ATOL:
                raise InconsistentBasis("supplied prototypes differ from curves @ alpha")
        if proto_params is not None:
            proto_params = np.asarray(proto_params, dtype=float).reshape(pp.shape[0], -1)
            if proto_params.shape != pp.shape or np.max(np.abs(proto_params - pp)) > SIMPLEX_ATOL:
                raise InconsistentBasis("supplied proto_params differ from alpha.T @ params")
        return cls(alpha, psi, pp, method_tag, dictionary.fingerprint, dict(diagnostics or {}))

    @property
    def K(self) -> int:
        return self.alpha.shape[1]

    @property
    def p(self) -> int:
        return self.prototypes.shape[0]

    def selected_indices(self) -> list:
        """Dictionary indices carrying weight in any prototype (sorted)."""
        return sorted(int(i) for i in np.flatnonzero(np.any(self.alpha > 0, axis=1)))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "prototypes": self.prototypes.tolist(),
            "proto_params": self.proto_params.tolist(),
            "method_tag": self.method_tag,
            "source_fingerprint": self.source_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrototypeBasis":
        return cls(np.array(d["alpha"], dtype=float), np.array(d["prototypes"], dtype=float),
                   np.array(d["proto_params"], dtype=float), d["method_tag"],
                   d["source_fingerprint"])


def check_alpha(alpha: np.ndarray) -> None:
    if alpha.ndim != 2 or alpha.shape[1] < 1:
        raise ShapeMismatch(f"alpha must be a non-empty N x K matrix, got shape {alpha.shape}")
    N, K = alpha.shape
    if K > N:
        raise ShapeMismatch(f"K={K} exceeds N={N}")
    bad = _first_nonfinite(alpha)
    if bad is not None:
        raise NonFiniteEntry(f"alpha{list(bad)} is not finite")
    if np.any(alpha < 0):
        i, k = np.argwhere(alpha < 0)[0]
        raise InconsistentBasis(f"alpha[{i}, {k}] is negative")
    sums = alpha.sum(axis=0)
    off = np.abs(sums - 1.0)
    if np.any(off > SIMPLEX_ATOL):
        k = int(np.argmax(off))
        raise InconsistentBasis(f"alpha column {k} sums to {sums[k]!r}, not 1")


def indicator_alpha(N: int, indices: Sequence[int]) -> np.ndarray:
    alpha = np.zeros((N, len(indices)))
    alpha[np.asarray(indices, dtype=int), np.arange(len(indices))] = 1.0
    return alpha


def cluster_mean_alpha(labels: np.ndarray, K: int) -> np.ndarray:
    """Column k holds ``1/|S_k|`` on the members of cluster k and 0 elsewhere."""
    labels = np.asarray(labels, dtype=int)
    alpha = np.zeros((labels.size, K))
    alpha[np.arange(labels.size), labels] = 1.0
    counts = alpha.sum(axis=0)
    if np.any(counts == 0):
        raise ValidationError(f"cluster {int(np.argmin(counts))} is empty")
    return alpha / counts


@dataclass(frozen=True, eq=False)
class Truth:
    gamma: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", _frozen(self.gamma, 1))
        object.__setattr__(self, "rho", _frozen(self.rho, 1))
        if np.any(self.gamma < 0) or abs(self.gamma.sum() - 1.0) > SIMPLEX_ATOL:
            raise ValidationError("truth.gamma must lie on the simplex")


@dataclass(frozen=True, eq=False)
class Observation:
    """One observed data vector with optional noise scale and ground truth."""

    y: np.ndarray
    noise_scale: Optional[np.ndarray] = None
    truth: Optional[Truth] = None

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(self.y, 1))
        if self.noise_scale is not None:
            ns = _frozen(self.noise_scale, 1)
            if ns.shape != self.y.shape:
                raise DimensionMismatch(f"noise_scale length {ns.size} != y length {self.y.size}")
            if np.any(~(ns > 0)):
                raise ValidationError("noise_scale entries must be positive")
            object.__setattr__(self, "noise_scale", ns)

    @property
    def p(self) -> int:
        return self.y.size

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"y": self.y.tolist()}
        if self.noise_scale is not None:
            d["noise_scale"] = self.noise_scale.tolist()
        if self.truth is not None:
            d["truth"] = {"gamma": self.truth.gamma.tolist(), "rho": self.truth.rho.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        truth = d.get("truth")
        if truth is not None:
            truth = Truth(np.array(truth["gamma"], dtype=float), np.array(truth["rho"], dtype=float))
        ns = d.get("noise_scale")
        return cls(np.array(d["y"], dtype=float), None if ns is None else np.array(ns, dtype=float), truth)


@dataclass(frozen=True, eq=False)
class MixtureFit:
    """Result of fitting ``y ~ scale * prototypes @ beta`` with beta on the simplex."""

    beta: np.ndarray
    scale: float
    residual_ss: float
    chi_square: Optional[float] = None
    iterations: int = 0
    zero_fit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta, 1))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "residual_ss", float(self.residual_ss))
        if self.chi_square is not None:
            object.__setattr__(self, "chi_square", float(self.chi_square))

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "scale": self.scale,
            "residual_ss": self.residual_ss,
            "chi_square": self.chi_square,
            "iterations": self.iterations,
            "zero_fit": self.zero_fit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureFit":
        return cls(np.array(d["beta"], dtype=float), d["scale"], d["residual_ss"],
                   d.get("chi_square"), int(d.get("iterations", 0)), bool(d.get("zero_fit", False)))


@dataclass(frozen=True)
class ReportRow:
    method_tag: str
    K: int
    rep_count: int
    mean_mse: float
    band_low: float
    band_high: float
    wall_time: float
    failed: bool = False
    reason: str = ""


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple
    config_echo: dict
    seed: int
    # per-cell per-repetition MSE values, keyed by (method_tag, K)
    per_rep: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        for r in self.rows:
            if not r.failed and r.band_low > r.band_high:
                raise ValidationError(f"band_low > band_high for {r.method_tag} K={r.K}")

    def row(self, method_tag: str, K: int) -> ReportRow:
        for r in self.rows:
            if r.method_tag == method_tag and r.K == K:
                return r
        raise KeyError((method_tag, K))

    def curve(self, method_tag: str) -> dict:
        """``{K: mean_mse}`` for the non-failed cells of one method."""
        return {r.K: r.mean_mse for r in self.rows if r.method_tag == method_tag and not r.failed}

    def best(self, method_tag: str) -> tuple:
        """``(K, mean_mse)`` of the lowest mean MSE for ``method_tag``."""
        c = self.curve(method_tag)
        if not c:
            raise KeyError(method_tag)
        K = min(c, key=lambda k: (c[k], k))
        return K, c[K]


# -- plain CSV helpers -------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def write_matrix(path, matrix, header: Optional[Sequence[str]] = None) -> None:
    """Write a numeric matrix as CSV with round-trip exact float formatting."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in matrix:
            w.writerow([_fmt(v) for v in row])


def read_matrix(path, header: bool = False) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        raise ShapeMismatch(f"{path} is empty")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ShapeMismatch(f"{path}: row {i} has {len(r)} fields, expected {width}")
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
