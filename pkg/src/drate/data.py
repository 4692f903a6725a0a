"""Domain types for samples, estimator identities, and results, plus CSV ingestion.

The observational unit is a row (covariates, treatment, outcome). CSV with a
header row is the single interchange format; treatments must be the literal
characters ``0`` or ``1``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "Backend",
    "ColumnSchema",
    "EstimateResult",
    "EstimatorId",
    "IndexDirections",
    "ObservationSet",
    "Violation",
    "load_dataset",
    "save_dataset",
    "validate",
]


class Backend(Enum):
    """Which family estimates a nuisance function."""

    PARAMETRIC = "parametric"
    SEMIPARAMETRIC = "semiparametric"
    NONPARAMETRIC = "nonparametric"


# Estimator index -> (propensity backend, outcome-regression backend).
_BACKEND_PAIRS = {
    1: (Backend.PARAMETRIC, Backend.PARAMETRIC),
    2: (Backend.PARAMETRIC, Backend.NONPARAMETRIC),
    3: (Backend.NONPARAMETRIC, Backend.PARAMETRIC),
    4: (Backend.NONPARAMETRIC, Backend.NONPARAMETRIC),
    5: (Backend.SEMIPARAMETRIC, Backend.PARAMETRIC),
    6: (Backend.PARAMETRIC, Backend.SEMIPARAMETRIC),
    7: (Backend.SEMIPARAMETRIC, Backend.NONPARAMETRIC),
    8: (Backend.NONPARAMETRIC, Backend.SEMIPARAMETRIC),
    9: (Backend.SEMIPARAMETRIC, Backend.SEMIPARAMETRIC),
}


@dataclass(frozen=True)
class EstimatorId:
    """One of the nine (propensity, outcome-regression) backend pairings."""

    id: int

    def __post_init__(self) -> None:
        if self.id not in _BACKEND_PAIRS:
            raise ValueError(f"estimator id must be in 1..9, got {self.id}")

    @property
    def ps_backend(self) -> Backend:
        return _BACKEND_PAIRS[self.id][0]

    @property
    def or_backend(self) -> Backend:
        return _BACKEND_PAIRS[self.id][1]

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"estimator {self.id} ({self.ps_backend.value} PS, {self.or_backend.value} OR)"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObservationSet:
    """An i.i.d. sample of (covariates, binary treatment, outcome) rows.

    Arrays are made read-only on construction; instances are safe to share
    across threads. Construction checks shapes only; value-level invariants
    (binary treatments, finiteness, p >= 2) are reported by :func:`validate`
    and enforced by :func:`load_dataset`.
    """

    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        d = np.asarray(self.treatments, dtype=float).ravel()
        y = np.asarray(self.outcomes, dtype=float).ravel()
        if x.shape[0] != d.shape[0] or x.shape[0] != y.shape[0]:
            raise ValueError(
                f"row mismatch: covariates {x.shape[0]}, treatments {d.shape[0]}, outcomes {y.shape[0]}"
            )
        object.__setattr__(self, "covariates", _readonly(x))
        object.__setattr__(self, "treatments", _readonly(d))
        object.__setattr__(self, "outcomes", _readonly(y))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def treated_mask(self) -> np.ndarray:
        return self.treatments == 1.0

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.treatments == 1.0))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.treatments == 0.0))


@dataclass(frozen=True)
class IndexDirections:
    """Unit-norm projection directions for the single-index nuisance fits."""

    ps: np.ndarray
    or_treated: np.ndarray
    or_control: np.ndarray

    def __post_init__(self) -> None:
        for name in ("ps", "or_treated", "or_control"):
            v = np.asarray(getattr(self, name), dtype=float).ravel()
            norm = float(np.linalg.norm(v))
            if abs(norm - 1.0) > 1e-10:
                raise ValueError(f"{name} direction must have unit norm, got {norm!r}")
            object.__setattr__(self, name, _readonly(v))


@dataclass(frozen=True)
class EstimateResult:
    """A fitted ATE with its two arm means and propensity-clip accounting."""

    theta1_hat: float
    theta0_hat: float
    estimator: EstimatorId | None = None
    clipped_count: int = 0
    delta_hat: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta_hat", self.theta1_hat - self.theta0_hat)

    def to_record(self) -> dict:
        return {
            "estimator": self.estimator.id if self.estimator is not None else None,
            "delta_hat": self.delta_hat,
            "theta1_hat": self.theta1_hat,
            "theta0_hat": self.theta0_hat,
            "clipped_count": self.clipped_count,
        }


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by :func:`validate`."""

    severity: str  # "error" or "warning"
    message: str
    row: int | None = None


def validate(obs: ObservationSet) -> list[Violation]:
    """Report every invariant violation in ``obs``; empty means valid.

    Never raises on bad values. A single-arm sample is reported at warning
    level: loading it is legal, estimating from it is not.
    """
    out: list[Violation] = []
    if obs.n < 1:
        out.append(Violation("error", "sample must contain at least one row"))
        return out
    if obs.p < 2:
        out.append(Violation("error", f"p must be >= 2, got p={obs.p}"))

    bad_d = np.nonzero(~np.isin(obs.treatments, (0.0, 1.0)))[0]
    if bad_d.size:
        out.append(
            Violation(
                "error",
                f"non-binary treatment in {bad_d.size} row(s)",
                row=int(bad_d[0]),
            )
        )
    bad_x = np.nonzero(~np.isfinite(obs.covariates).all(axis=1))[0]
    if bad_x.size:
        out.append(
            Violation("error", f"non-finite covariate in {bad_x.size} row(s)", row=int(bad_x[0]))
        )
    bad_y = np.nonzero(~np.isfinite(obs.outcomes))[0]
    if bad_y.size:
        out.append(
            Violation("error", f"non-finite outcome in {bad_y.size} row(s)", row=int(bad_y[0]))
        )

    if not bad_d.size:
        if obs.n_treated == 0 or obs.n_control == 0:
            arm = "control" if obs.n_control == 0 else "treated"
            out.append(
                Violation(
                    "warning",
                    f"single-arm sample: every unit is {'treated' if arm == 'control' else 'untreated'};"
                    " estimation will fail on the empty arm",
                )
            )
    return out


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV header names onto the treatment, outcome, and covariate roles."""

    treatment: str
    outcome: str
    covariates: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", tuple(self.covariates))


def load_dataset(path: str | Path, schema: ColumnSchema) -> ObservationSet:
    """Read a header-row CSV into a validated :class:`ObservationSet`.

    Treatments must be the literal strings ``0`` or ``1``. Raises
    :class:`DataError` on structural problems or error-level invariant
    violations; warning-level violations are emitted via :mod:`warnings`.
    """
    path = Path(path)
    if len(schema.covariates) < 2:
        raise DataError(f"p must be >= 2: schema names {len(schema.covariates)} covariate column(s)")
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.treatment, schema.outcome, *schema.covariates]
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"missing column(s) {missing} in {path} (header: {header})")

        xs: list[list[float]] = []
        ds: list[float] = []
        ys: list[float] = []
        for i, row in enumerate(reader):
            raw_d = (row[schema.treatment] or "").strip()
            if raw_d not in ("0", "1"):
                raise DataError(f"non-binary treatment {raw_d!r} at row {i}")
            ds.append(float(raw_d))
            try:
                ys.append(float(row[schema.outcome]))
                xs.append([float(row[c]) for c in schema.covariates])
            except (TypeError, ValueError) as exc:
                raise DataError(f"non-numeric cell at row {i}: {exc}") from exc

    if not ds:
        raise DataError(f"dataset {path} has no data rows")

    obs = ObservationSet(np.array(xs), np.array(ds), np.array(ys))
    problems = validate(obs)
    errors = [v for v in problems if v.severity == "error"]
    if errors:
        raise DataError("; ".join(v.message for v in errors))
    for v in problems:
        warnings.warn(v.message, stacklevel=2)
    return obs


def save_dataset(obs: ObservationSet, path: str | Path, schema: ColumnSchema | None = None) -> None:
    """Write ``obs`` as CSV, round-trippable bit-for-bit through ``load_dataset``.

    Floats use shortest round-trip formatting (repr), so a save/load cycle
    reproduces every value exactly. Treatments are written as 0/1 literals.
    """
    if schema is None:
        schema = ColumnSchema(
            treatment="d", outcome="y", covariates=tuple(f"x{j + 1}" for j in range(obs.p))
        )
    if len(schema.covariates) != obs.p:
        raise DataError(
            f"schema names {len(schema.covariates)} covariates but data has p={obs.p}"
        )
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*schema.covariates, schema.treatment, schema.outcome])
        for i in range(obs.n):
            row = [repr(float(v)) for v in obs.covariates[i]]
            d = obs.treatments[i]
            row.append("1" if d == 1.0 else "0" if d == 0.0 else repr(float(d)))
            y = float(obs.outcomes[i])
            row.append(repr(y) if math.isfinite(y) else str(y))
            writer.writerow(row)
