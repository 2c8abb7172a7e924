"""Closed-form fitted models of GPU training memory.

Three model kinds share one coefficient container:

* ``bart``     -- full-attention encoder-decoder; activation memory grows
  with N^2 (encoder self-attention dominates at long inputs).
* ``lobart``   -- banded-encoder variant; the quadratic term becomes N*W.
* ``hier_rnn`` -- hierarchical RNN selector; linear in sentence count.

Coefficients are data, not code: the GiB constants bundled in
``data/memory_coefficients.txt`` are desk defaults, and fits for other
hardware drop in through the same flat ``name = value`` file format.
All totals use GiB = 2^30 bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, FormatError, SingularFitError

GIB = float(2**30)

KIND_BART = "bart"
KIND_LOBART = "lobart"
KIND_HIER = "hier_rnn"

_TERM_NAMES = {
    KIND_BART: ("const", "per_m", "per_n", "per_mn", "per_m2", "per_n2"),
    KIND_LOBART: ("const", "per_m", "per_n", "per_mn", "per_m2", "per_nw"),
    KIND_HIER: ("const", "per_n1", "per_n1n2"),
}

_FILE_KEYS = {
    KIND_BART: tuple(f"c_b_{i}" for i in range(1, 7)),
    KIND_LOBART: tuple(f"c_l_{i}" for i in range(1, 7)),
    KIND_HIER: ("hier_c0", "hier_c1", "hier_c2"),
}


def load_coefficient_file(path) -> dict[str, float]:
    """Parse a flat ``name = value`` coefficient file ('#' starts a comment)."""
    values: dict[str, float] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'name = value', got {raw!r}")
        name, _, value = line.partition("=")
        try:
            values[name.strip()] = float(value.strip())
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad numeric value {value.strip()!r}") from exc
    return values


def _bundled_values() -> dict[str, float]:
    ref = resources.files("longspan").joinpath("data/memory_coefficients.txt")
    with resources.as_file(ref) as path:
        return load_coefficient_file(path)


@dataclass(frozen=True)
class CostCoefficients:
    """Per-kind fitted constants (GiB per unit of the kind's basis terms)."""

    kind: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in _TERM_NAMES:
            raise DomainError(f"unknown cost-model kind {self.kind!r}")
        expected = len(_TERM_NAMES[self.kind])
        if len(self.values) != expected:
            raise DomainError(
                f"{self.kind} model takes {expected} coefficients, got {len(self.values)}"
            )
        for name, v in zip(_TERM_NAMES[self.kind], self.values):
            if not math.isfinite(v) or v < 0:
                raise DomainError(f"coefficient {name} must be finite and >= 0, got {v}")

    def named(self) -> dict[str, float]:
        return dict(zip(_TERM_NAMES[self.kind], self.values))

    @classmethod
    def from_mapping(cls, kind: str, mapping: Mapping[str, float]) -> "CostCoefficients":
        keys = _FILE_KEYS.get(kind)
        if keys is None:
            raise DomainError(f"unknown cost-model kind {kind!r}")
        try:
            return cls(kind, tuple(float(mapping[k]) for k in keys))
        except KeyError as exc:
            raise FormatError(f"coefficient file is missing {exc.args[0]!r}") from exc

    @classmethod
    def from_file(cls, path, kind: str) -> "CostCoefficients":
        return cls.from_mapping(kind, load_coefficient_file(path))

    @classmethod
    def defaults(cls, kind: str) -> "CostCoefficients":
        return cls.from_mapping(kind, _bundled_values())


@dataclass(frozen=True)
class MemoryBreakdown:
    """Per-term GiB values for one operating point; total is their sum."""

    kind: str
    args: dict[str, int]
    terms: dict[str, float]
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", float(sum(self.terms.values())))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "args": dict(self.args),
                "terms": dict(self.terms), "total_gib": self.total}


def _check_positive(**kwargs: int) -> None:
    for name, value in kwargs.items():
        if int(value) != value or value < 1:
            raise DomainError(f"{name} must be a positive integer, got {value}")


def bart_memory(n: int, m: int, batch: int = 1,
                coeffs: CostCoefficients | None = None) -> MemoryBreakdown:
    """Training memory of the full-attention model at input/target (N, M)."""
    _check_positive(n=n, m=m, batch=batch)
    coeffs = coeffs or CostCoefficients.defaults(KIND_BART)
    if coeffs.kind != KIND_BART:
        raise DomainError(f"expected {KIND_BART} coefficients, got {coeffs.kind}")
    c1, c2, c3, c4, c5, c6 = coeffs.values
    terms = {
        "const": c1,
        "per_m": batch * c2 * m,
        "per_n": batch * c3 * n,
        "per_mn": batch * c4 * m * n,
        "per_m2": batch * c5 * m * m,
        "per_n2": batch * c6 * n * n,
    }
    return MemoryBreakdown(KIND_BART, {"n": n, "m": m, "batch": batch}, terms)


def lobart_memory(n: int, m: int, window: int, batch: int = 1,
                  coeffs: CostCoefficients | None = None) -> MemoryBreakdown:
    """Training memory of the banded-encoder model at (N, M, W)."""
    _check_positive(n=n, m=m, window=window, batch=batch)
    coeffs = coeffs or CostCoefficients.defaults(KIND_LOBART)
    if coeffs.kind != KIND_LOBART:
        raise DomainError(f"expected {KIND_LOBART} coefficients, got {coeffs.kind}")
    c1, c2, c3, c4, c5, c6 = coeffs.values
    terms = {
        "const": c1,
        "per_m": batch * c2 * m,
        "per_n": batch * c3 * n,
        "per_mn": batch * c4 * m * n,
        "per_m2": batch * c5 * m * m,
        "per_nw": batch * c6 * n * window,
    }
    return MemoryBreakdown(KIND_LOBART, {"n": n, "m": m, "window": window, "batch": batch}, terms)


def hier_rnn_memory(n1: int, n2: int, batch: int = 1,
                    coeffs: CostCoefficients | None = None) -> MemoryBreakdown:
    """Training memory of the hierarchical RNN selector at (N1 sentences, N2 words)."""
    _check_positive(n1=n1, n2=n2, batch=batch)
    coeffs = coeffs or CostCoefficients.defaults(KIND_HIER)
    if coeffs.kind != KIND_HIER:
        raise DomainError(f"expected {KIND_HIER} coefficients, got {coeffs.kind}")
    c0, c1, c2 = coeffs.values
    terms = {
        "const": c0,
        "per_n1": batch * c1 * n1,
        "per_n1n2": batch * c2 * n1 * n2,
    }
    return MemoryBreakdown(KIND_HIER, {"n1": n1, "n2": n2, "batch": batch}, terms)


def model_optimizer_memory(param_count: int, bytes_per_value: int = 4) -> MemoryBreakdown:
    """Static memory: parameters + gradients + two adaptive-moment buffers.

    Each parameter stores one gradient and the optimizer keeps first and
    second moments, so the total is 4x the parameter bytes.
    """
    if param_count < 0:
        raise DomainError(f"param_count must be >= 0, got {param_count}")
    if bytes_per_value < 1:
        raise DomainError(f"bytes_per_value must be >= 1, got {bytes_per_value}")
    per = param_count * bytes_per_value / GIB
    terms = {
        "parameters": per,
        "gradients": per,
        "adam_first_moment": per,
        "adam_second_moment": per,
    }
    return MemoryBreakdown(
        "model_optimizer",
        {"param_count": param_count, "bytes_per_value": bytes_per_value},
        terms,
    )


def breakeven_width(n: int, bart: CostCoefficients | None = None,
                    lobart: CostCoefficients | None = None) -> float:
    """Largest window still saving activation memory vs. full attention.

    Compares the dominant terms c6_full*N^2 against c6_band*N*W, giving
    W_max = (c6_full / c6_band) * N (~0.58 N at the bundled defaults).
    """
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    bart = bart or CostCoefficients.defaults(KIND_BART)
    lobart = lobart or CostCoefficients.defaults(KIND_LOBART)
    c_full = bart.values[5]
    c_band = lobart.values[5]
    if c_band == 0.0:
        raise DomainError("band coefficient per_nw is zero; break-even width undefined")
    return (c_full / c_band) * n


def fit_coefficients(samples: Sequence[Mapping[str, float]], kind: str,
                     value_key: str = "gib") -> tuple[CostCoefficients, float]:
    """Ordinary least squares over the kind's basis terms; returns (fit, RMSE).

    Each sample maps size names to values plus ``value_key`` for the
    measurement.  The same bases serve time fits (quadratic N^2 for the
    full model, N*W for the banded one); pass measured seconds as the
    value and interpret the coefficients accordingly.
    """
    rows = []
    targets = []
    for sample in samples:
        b = float(sample.get("b", 1))
        if kind == KIND_BART:
            n, m = float(sample["n"]), float(sample["m"])
            rows.append([1.0, b * m, b * n, b * m * n, b * m * m, b * n * n])
        elif kind == KIND_LOBART:
            n, m, w = float(sample["n"]), float(sample["m"]), float(sample["w"])
            rows.append([1.0, b * m, b * n, b * m * n, b * m * m, b * n * w])
        elif kind == KIND_HIER:
            n1, n2 = float(sample["n1"]), float(sample["n2"])
            rows.append([1.0, b * n1, b * n1 * n2])
        else:
            raise DomainError(f"unknown cost-model kind {kind!r}")
        targets.append(float(sample[value_key]))
    design = np.asarray(rows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    n_terms = len(_TERM_NAMES[kind])
    if design.shape[0] < n_terms:
        raise SingularFitError(
            f"{design.shape[0]} samples cannot determine {n_terms} coefficients"
        )
    if np.linalg.matrix_rank(design) < n_terms:
        raise SingularFitError("design matrix is rank deficient")
    solution, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    # OLS noise can push a tiny coefficient below zero; treat that as zero
    # within round-off, and refuse clearly negative physics.
    cleaned = []
    for name, v in zip(_TERM_NAMES[kind], solution):
        if v < -1e-9:
            raise DomainError(
                f"fitted coefficient {name} = {v:.3e} is negative; "
                "samples do not support this model form"
            )
        cleaned.append(max(v, 0.0))
    residual = design @ solution - y
    rmse = float(np.sqrt(np.mean(residual**2)))
    return CostCoefficients(kind, tuple(cleaned)), rmse


@dataclass(frozen=True)
class OperatingPoint:
    """One (N, W) candidate annotated against a memory budget."""

    n: int
    window: int | None
    total_gib: float
    feasible: bool

    def to_dict(self) -> dict:
        return {"n": self.n, "window": self.window,
                "total_gib": self.total_gib, "feasible": self.feasible}


def advise_operating_point(
    budget_gib: float,
    m: int,
    batch: int,
    candidates: Iterable[tuple[int, int | None]],
    bart: CostCoefficients | None = None,
    lobart: CostCoefficients | None = None,
) -> list[OperatingPoint]:
    """Annotate (N, W) candidates as feasible/infeasible under a GiB budget.

    ``window=None`` means full attention and uses the full-attention model.
    """
    candidates = list(candidates)
    if not candidates:
        raise DomainError("candidate grid is empty")
    points = []
    for n, window in candidates:
        if window is None:
            total = bart_memory(n, m, batch, coeffs=bart).total
        else:
            total = lobart_memory(n, m, window, batch, coeffs=lobart).total
        points.append(OperatingPoint(n, window, total, total <= budget_gib))
    return points
