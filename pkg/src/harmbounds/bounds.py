"""Nonparametric interval estimation of the treatment harm rate over a partition.

Within each cell the harm rate is bracketed by the Frechet-Hoeffding pair
[max{0, mu0 - mu1}, min{mu0, 1 - mu1}] of the arm-wise success frequencies;
cells are mixed by their sample shares. A direct pointwise plug-in of fitted
models is provided as a comparator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import ProbModel
from .dataset import Dataset
from .errors import DegenerateCellError, ParameterError
from .partitioning import Partition

__all__ = [
    "CellStats",
    "BoundsEstimate",
    "cell_stats",
    "estimate_bounds",
    "estimate_with_merging",
    "plug_in_bounds",
]


@dataclass(frozen=True)
class CellStats:
    """Per-cell counts and arm-wise success statistics.

    mu_hat[a, j] is the frequency of outcome +1 among arm-a samples in cell j
    (NaN when that arm is empty in the cell); ss[a, j] is the within-cell sum
    of squares of the favorable-outcome indicator around its mean.
    """

    labels: tuple
    n: int
    n_j: np.ndarray  # (J,)
    n_aj: np.ndarray  # (2, J)
    mu_hat: np.ndarray  # (2, J), NaN where undefined
    ss: np.ndarray  # (2, J)

    @property
    def J(self) -> int:
        return len(self.labels)

    def degenerate_cells(self) -> list[int]:
        """Indices of nonempty cells missing at least one arm."""
        return [
            j
            for j in range(self.J)
            if self.n_j[j] > 0 and (self.n_aj[0, j] == 0 or self.n_aj[1, j] == 0)
        ]


def stats_from_assignment(outcomes, arms, assignment, labels) -> CellStats:
    """Exact per-cell counts from a cell-index vector."""
    outcomes = np.asarray(outcomes)
    arms = np.asarray(arms)
    assignment = np.asarray(assignment)
    J = len(labels)
    n = len(outcomes)
    z = (outcomes == 1).astype(np.float64)
    n_j = np.bincount(assignment, minlength=J).astype(np.int64)
    n_aj = np.zeros((2, J), dtype=np.int64)
    mu_hat = np.full((2, J), np.nan)
    ss = np.zeros((2, J))
    for a in (0, 1):
        mask = arms == a
        n_aj[a] = np.bincount(assignment[mask], minlength=J)
        sums = np.bincount(assignment[mask], weights=z[mask], minlength=J)
        with np.errstate(invalid="ignore"):
            mu = sums / n_aj[a]
        mu_hat[a] = mu
        # for a binary indicator, sum (z - zbar)^2 = count * p(1-p)
        ss[a] = np.where(n_aj[a] > 0, n_aj[a] * np.nan_to_num(mu) * (1 - np.nan_to_num(mu)), 0.0)
    return CellStats(tuple(labels), n, n_j, n_aj, mu_hat, ss)


def cell_stats(dataset: Dataset, partition: Partition) -> CellStats:
    """Count samples and arm-wise success frequencies in each partition cell."""
    assignment = partition.assign(dataset.covariates)
    return stats_from_assignment(dataset.outcomes, dataset.arms, assignment, partition.cells)


@dataclass(frozen=True)
class BoundsEstimate:
    """An interval [lower, upper] for the harm rate with its information.

    information = 1 + lower - upper; wider intervals carry less information.
    """

    lower: float
    upper: float
    information: float = None  # derived

    def __post_init__(self):
        eps = 1e-12
        if not (-eps <= self.lower <= self.upper + eps and self.upper <= 1 + eps):
            raise ParameterError(
                f"bounds must satisfy 0 <= lower <= upper <= 1, got [{self.lower}, {self.upper}]"
            )
        object.__setattr__(self, "lower", float(min(max(self.lower, 0.0), 1.0)))
        object.__setattr__(self, "upper", float(min(max(self.upper, 0.0), 1.0)))
        object.__setattr__(self, "information", 1.0 + self.lower - self.upper)

    def to_json(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "information": self.information}


def estimate_bounds(stats: CellStats) -> BoundsEstimate:
    """Cell-share-weighted Frechet-Hoeffding bounds from cell statistics.

    Empty cells contribute nothing. A nonempty cell missing one arm has no
    defined frequency pair and raises DegenerateCellError naming the cell;
    see ``estimate_with_merging`` for the recovery policy.
    """
    bad = stats.degenerate_cells()
    if bad:
        names = [str(stats.labels[j]) for j in bad]
        raise DegenerateCellError(
            f"cell(s) {names} have samples from only one arm", cells=bad
        )
    weights = stats.n_j / stats.n
    lower = 0.0
    upper = 0.0
    for j in range(stats.J):
        if stats.n_j[j] == 0:
            continue
        mu0 = stats.mu_hat[0, j]
        mu1 = stats.mu_hat[1, j]
        lower += weights[j] * max(0.0, mu0 - mu1)
        upper += weights[j] * min(mu0, 1.0 - mu1)
    return BoundsEstimate(lower, upper)


def estimate_with_merging(dataset: Dataset, partition: Partition):
    """Estimate bounds, merging arm-degenerate cells into the largest cell.

    Returns (BoundsEstimate, CellStats, merges) where merges lists
    (from_label, into_label) pairs in the order applied. Merging coarsens the
    partition, which can only widen the bounds, never invalidate them.
    """
    assignment = partition.assign(dataset.covariates).copy()
    labels = list(partition.cells)
    merges: list[tuple[str, str]] = []
    while True:
        stats = stats_from_assignment(dataset.outcomes, dataset.arms, assignment, labels)
        bad = stats.degenerate_cells()
        if not bad:
            return estimate_bounds(stats), stats, merges
        j = bad[0]
        # prefer the largest two-arm cell; fall back to the largest other cell
        sizes = stats.n_j.astype(np.int64).copy()
        sizes[j] = -1
        clean_sizes = sizes.copy()
        clean_sizes[bad] = -1
        target = int(np.argmax(clean_sizes if clean_sizes.max() > 0 else sizes))
        if sizes[target] <= 0:
            raise DegenerateCellError(
                "cannot merge: no other nonempty cell exists", cells=bad
            )
        assignment[assignment == j] = target
        merges.append((str(labels[j]), str(labels[target])))


def plug_in_bounds(mu0: ProbModel, mu1: ProbModel, eval_data: Dataset) -> BoundsEstimate:
    """Pointwise plug-in of fitted models, averaged over evaluation rows.

    The models must be independent of ``eval_data`` (arranged by the caller,
    e.g. through cross-fitting).
    """
    X = eval_data.covariates
    p0 = np.atleast_1d(mu0.predict_proba(X))
    p1 = np.atleast_1d(mu1.predict_proba(X))
    lower = float(np.mean(np.maximum(0.0, p0 - p1)))
    upper = float(np.mean(np.minimum(p0, 1.0 - p1)))
    return BoundsEstimate(lower, upper)
