"""Core data containers, CSV ingestion and fold splitting.

Outcomes are stored in the canonical {-1, +1} coding (+1 favorable), arms in
{0, 1} (1 treated), covariates as a dense float matrix.
"""

from __future__ import annotations

import csv
import fnmatch
from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    EncodingError,
    ParameterError,
    ParseError,
    SchemaError,
)


@dataclass(frozen=True)
class Sample:
    """A single trial record: observed outcome, assigned arm, covariates."""

    outcome: int
    arm: int
    covariates: np.ndarray

    def __post_init__(self):
        if self.outcome not in (-1, 1):
            raise DomainError(f"outcome must be -1 or +1, got {self.outcome}")
        if self.arm not in (0, 1):
            raise DomainError(f"arm must be 0 or 1, got {self.arm}")


@dataclass(frozen=True)
class Dataset:
    """Immutable table of (outcome, arm, covariates) rows.

    Attributes
    ----------
    outcomes : (n,) int array with values in {-1, +1}
    arms : (n,) int array with values in {0, 1}
    covariates : (n, p) float array
    """

    outcomes: np.ndarray
    arms: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        outcomes = np.asarray(self.outcomes, dtype=np.int64)
        arms = np.asarray(self.arms, dtype=np.int64)
        covariates = np.asarray(self.covariates, dtype=np.float64)
        if covariates.ndim != 2 or covariates.shape[1] < 1:
            raise ParameterError("covariates must be a 2-d array with p >= 1")
        n = covariates.shape[0]
        if outcomes.shape != (n,) or arms.shape != (n,):
            raise ParameterError("outcomes, arms and covariates must have equal length")
        if n == 0:
            raise ParameterError("dataset must contain at least one sample")
        if not np.all(np.isin(outcomes, (-1, 1))):
            raise DomainError("outcomes must lie in {-1, +1}")
        if not np.all(np.isin(arms, (0, 1))):
            raise DomainError("arms must lie in {0, 1}")
        if not np.all(np.isfinite(covariates)):
            raise DomainError("covariates must be finite")
        for name, arr in (("outcomes", outcomes), ("arms", arms), ("covariates", covariates)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return [
            Sample(int(y), int(a), x)
            for y, a, x in zip(self.outcomes, self.arms, self.covariates)
        ]

    def restrict(self, arm: int) -> "Dataset":
        """Rows assigned to one arm, in original order."""
        mask = self.arms == arm
        if not mask.any():
            raise ParameterError(f"no samples in arm {arm}")
        return Dataset(self.outcomes[mask], self.arms[mask], self.covariates[mask])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.outcomes[idx], self.arms[idx], self.covariates[idx])

    def require_both_arms(self):
        if not ((self.arms == 0).any() and (self.arms == 1).any()):
            raise ParameterError("estimation requires samples in both arms")


@dataclass(frozen=True)
class FoldAssignment:
    """Assignment of each sample index to one of K folds, balanced within 1."""

    fold_of: np.ndarray
    K: int

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=np.int64)
        if self.K < 2:
            raise ParameterError("K must be at least 2")
        if fold_of.min() < 0 or fold_of.max() >= self.K:
            raise ParameterError("fold labels must lie in [0, K)")
        sizes = np.bincount(fold_of, minlength=self.K)
        if sizes.max() - sizes.min() > 1:
            raise ParameterError("fold sizes must differ by at most 1")
        fold_of.setflags(write=False)
        object.__setattr__(self, "fold_of", fold_of)

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


@dataclass(frozen=True)
class ColumnSchema:
    """Column configuration for CSV ingestion.

    ``covariates`` may be an explicit list of column names, a glob pattern
    (e.g. ``"x*"``), or None to take every column other than outcome and arm.
    ``favorable`` designates the raw outcome value mapped to +1; when omitted,
    outcomes coded {0, 1} map 1 -> +1 and {-1, 1} are taken as-is.
    """

    outcome: str = "y"
    arm: str = "a"
    covariates: list[str] | str | None = None
    favorable: str | float | None = None


def _parse_number(token: str):
    try:
        return float(token)
    except ValueError:
        return None


def _resolve_covariate_columns(header, schema: ColumnSchema):
    if schema.covariates is None:
        cols = [c for c in header if c not in (schema.outcome, schema.arm)]
    elif isinstance(schema.covariates, str):
        pattern = schema.covariates
        if any(ch in pattern for ch in "*?["):
            cols = [c for c in header if fnmatch.fnmatch(c, pattern)]
        else:
            cols = [c.strip() for c in pattern.split(",") if c.strip()]
    else:
        cols = list(schema.covariates)
    missing = [c for c in cols if c not in header]
    if missing:
        raise SchemaError(f"covariate column(s) not found: {missing}")
    if not cols:
        raise SchemaError("at least one covariate column is required")
    return cols


def _outcome_mapper(distinct, favorable):
    """Return a dict raw-value -> {-1, +1}."""
    if len(distinct) != 2:
        raise EncodingError(
            f"outcome column must contain exactly two distinct values, found {sorted(map(str, distinct))}"
        )
    if favorable is not None:
        fav_num = _parse_number(str(favorable))
        matches = [
            v
            for v in distinct
            if str(v) == str(favorable)
            or (fav_num is not None and _parse_number(str(v)) == fav_num)
        ]
        if len(matches) != 1:
            raise EncodingError(
                f"favorable value {favorable!r} does not match exactly one outcome value"
            )
        fav = matches[0]
        other = next(v for v in distinct if v != fav)
        return {fav: 1, other: -1}
    numeric = {v: _parse_number(str(v)) for v in distinct}
    values = set(numeric.values())
    if values == {0.0, 1.0}:
        return {v: (1 if numeric[v] == 1.0 else -1) for v in distinct}
    if values == {-1.0, 1.0}:
        return {v: int(numeric[v]) for v in distinct}
    raise EncodingError(
        "outcome values are not {0,1} or {-1,1}; designate a favorable value"
    )


def load_csv(path, schema: ColumnSchema | None = None) -> Dataset:
    """Read a trial CSV into a Dataset.

    The file must have a header row. Outcomes are recoded onto {-1, +1}
    according to the schema; arms must be exactly 0 or 1. Rows with missing
    or non-numeric covariate cells are rejected with the row index (1-based,
    excluding the header).
    """
    schema = schema or ColumnSchema()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in (schema.outcome, schema.arm):
            if required not in header:
                raise SchemaError(f"column {required!r} not found in {header}")
        cov_cols = _resolve_covariate_columns(header, schema)
        col_idx = {c: header.index(c) for c in header}
        y_idx = col_idx[schema.outcome]
        a_idx = col_idx[schema.arm]
        c_idx = [col_idx[c] for c in cov_cols]

        raw_outcomes: list[str] = []
        arms: list[int] = []
        rows: list[list[float]] = []
        for i, record in enumerate(reader, start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise ParseError(f"row {i}: expected {len(header)} cells, got {len(record)}", row=i)
            raw_outcomes.append(record[y_idx].strip())
            arm_num = _parse_number(record[a_idx].strip())
            if arm_num not in (0.0, 1.0):
                raise DomainError(f"row {i}: arm must be 0 or 1, got {record[a_idx]!r}", row=i)
            arms.append(int(arm_num))
            vec = []
            for c, j in zip(cov_cols, c_idx):
                cell = record[j].strip()
                value = _parse_number(cell) if cell else None
                if value is None or not np.isfinite(value):
                    raise ParseError(
                        f"row {i}: covariate {c!r} is missing or non-numeric ({cell!r})", row=i
                    )
                vec.append(value)
            rows.append(vec)

    if not rows:
        raise SchemaError(f"{path}: no data rows")
    mapper = _outcome_mapper(set(raw_outcomes), schema.favorable)
    outcomes = np.array([mapper[v] for v in raw_outcomes], dtype=np.int64)
    return Dataset(outcomes, np.array(arms, dtype=np.int64), np.array(rows, dtype=np.float64))


def write_csv(dataset: Dataset, path, schema: ColumnSchema | None = None):
    """Write a Dataset back to CSV in the canonical {-1,+1} outcome coding."""
    schema = schema or ColumnSchema()
    cov_names = (
        schema.covariates
        if isinstance(schema.covariates, list)
        else [f"x{j + 1}" for j in range(dataset.p)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.outcome, schema.arm, *cov_names])
        for y, a, x in zip(dataset.outcomes, dataset.arms, dataset.covariates):
            writer.writerow([int(y), int(a), *(repr(float(v)) for v in x)])


def fold_indices(n: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random balanced assignment of n indices to K folds."""
    if K < 2 or K > n:
        raise ParameterError(f"fold count must satisfy 2 <= K <= n, got K={K}, n={n}")
    base, extra = divmod(n, K)
    sizes = [base + 1 if k < extra else base for k in range(K)]
    labels = np.repeat(np.arange(K), sizes)
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = labels
    return fold_of


def split_folds(dataset: Dataset, K: int, rng: np.random.Generator) -> FoldAssignment:
    """Randomly split the dataset into K folds of near-equal size."""
    return FoldAssignment(fold_indices(dataset.n, K, rng), K)
