"""Partitions of covariate space used to sharpen treatment-harm-rate bounds.

A partition assigns every covariate vector to one of at most four cells. The
four-cell rule sends x to the (arm, sign) pair maximizing the estimated
P(Y(arm) = sign | x); a pair of two-cell rules targets the lower and upper
bound separately. Ties are resolved by hashing (x, seed), which keeps every
rule a fixed, reproducible function.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .classifiers import FixedFunctionModel, ProbModel
from .errors import InvariantError, ParameterError

__all__ = [
    "CellLabel",
    "Partition",
    "AT_PAIRS",
    "naive_partition",
    "plug_in_partition",
    "two_cell_partitions",
    "oracle_partition",
    "weighted_bayes_risk",
]

# candidate (arm, sign) pairs in fixed order; P(Y(a)=t|x) = (1-t)/2 + t*mu_a(x)
AT_PAIRS = ((0, 1), (0, -1), (1, 1), (1, -1))


@dataclass(frozen=True)
class CellLabel:
    """Identity of a partition cell.

    kind: "whole" (single-cell rule), "at" (an (arm, sign) pair of the
    four-cell rule), "lower"/"upper" (the sign side of a two-cell rule).
    """

    kind: str
    arm: int | None = None
    sign: int | None = None

    def __post_init__(self):
        if self.kind not in ("whole", "at", "lower", "upper"):
            raise ParameterError(f"unknown cell kind {self.kind!r}")
        if self.kind == "at" and (self.arm not in (0, 1) or self.sign not in (-1, 1)):
            raise ParameterError("at-cells need arm in {0,1} and sign in {-1,1}")
        if self.kind in ("lower", "upper") and self.sign not in (-1, 1):
            raise ParameterError("two-cell labels need sign in {-1,1}")

    def __str__(self):
        if self.kind == "whole":
            return "whole"
        if self.kind == "at":
            return f"(a={self.arm},t={self.sign:+d})"
        return f"{self.kind}(t={self.sign:+d})"


@dataclass(frozen=True)
class Partition:
    """A fixed measurable rule: covariate vector -> cell index."""

    cells: tuple
    assign_fn: Callable = field(repr=False)

    @property
    def J(self) -> int:
        return len(self.cells)

    def assign(self, x) -> np.ndarray:
        """Cell indices for a batch (m, p) or single vector (p,)."""
        X = np.asarray(x, dtype=np.float64)
        if X.ndim == 1:
            return self.assign_fn(X[None, :])[:1]
        return self.assign_fn(X)

    def rule(self, x) -> CellLabel:
        return self.cells[int(self.assign(x)[0])]

    def at_labels(self, x) -> np.ndarray:
        """(m, 2) array of (arm, sign) labels; only valid for at-cell partitions."""
        if any(c.kind != "at" for c in self.cells):
            raise ParameterError("at_labels requires a four-cell (arm, sign) partition")
        table = np.array([(c.arm, c.sign) for c in self.cells], dtype=np.int64)
        return table[self.assign(x)]

    def cell_shares(self, x) -> np.ndarray:
        idx = self.assign(x)
        return np.bincount(idx, minlength=self.J) / len(idx)


def naive_partition() -> Partition:
    """The single-cell partition: every x in one cell."""
    cells = (CellLabel("whole"),)
    return Partition(cells, lambda X: np.zeros(X.shape[0], dtype=np.int64))


def _tie_choice(row_bytes: bytes, seed: int, n_tied: int) -> int:
    salt = (int(seed) & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    h = hashlib.blake2b(row_bytes, digest_size=8, salt=salt)
    return int.from_bytes(h.digest(), "little") % n_tied


def _candidate_matrix(mu0: ProbModel, mu1: ProbModel, X: np.ndarray) -> np.ndarray:
    p0 = np.atleast_1d(mu0.predict_proba(X))
    p1 = np.atleast_1d(mu1.predict_proba(X))
    for name, p in (("mu0", p0), ("mu1", p1)):
        if p.min() < 0 or p.max() > 1:
            raise InvariantError(f"{name} produced a probability outside [0, 1]")
    cols = []
    for arm, sign in AT_PAIRS:
        p = p0 if arm == 0 else p1
        cols.append((1 - sign) / 2 + sign * p)
    return np.column_stack(cols)


def plug_in_partition(mu0: ProbModel, mu1: ProbModel, tie_seed: int = 0) -> Partition:
    """Four-cell rule from fitted arm-wise models.

    x goes to the (arm, sign) pair with the largest estimated probability
    P(Y(arm) = sign | x); exact ties are broken uniformly among the tied
    pairs by hashing (x, tie_seed), so repeated evaluation is stable.
    """
    if mu0.n_features != mu1.n_features:
        raise ParameterError("mu0 and mu1 must share the covariate dimension")
    cells = tuple(CellLabel("at", arm=a, sign=t) for a, t in AT_PAIRS)

    def assign(X: np.ndarray) -> np.ndarray:
        cand = _candidate_matrix(mu0, mu1, X)
        best = cand.max(axis=1)
        tied = cand == best[:, None]
        idx = np.argmax(tied, axis=1)
        multi = tied.sum(axis=1) > 1
        for i in np.flatnonzero(multi):
            options = np.flatnonzero(tied[i])
            pick = _tie_choice(X[i].tobytes(), tie_seed, len(options))
            idx[i] = options[pick]
        return idx

    return Partition(cells, assign)


def two_cell_partitions(mu0: ProbModel, mu1: ProbModel) -> tuple[Partition, Partition]:
    """The pair of two-cell rules targeting the lower and upper bound.

    Lower rule: {mu0 <= mu1} vs its complement; upper rule: {mu0 + mu1 <= 1}
    vs its complement. Boundary equality goes to the sign=+1 side.
    """
    if mu0.n_features != mu1.n_features:
        raise ParameterError("mu0 and mu1 must share the covariate dimension")

    def assign_lower(X):
        p0 = np.atleast_1d(mu0.predict_proba(X))
        p1 = np.atleast_1d(mu1.predict_proba(X))
        return np.where(p0 <= p1, 0, 1).astype(np.int64)

    def assign_upper(X):
        p0 = np.atleast_1d(mu0.predict_proba(X))
        p1 = np.atleast_1d(mu1.predict_proba(X))
        return np.where(p0 + p1 <= 1.0, 0, 1).astype(np.int64)

    lower = Partition((CellLabel("lower", sign=1), CellLabel("lower", sign=-1)), assign_lower)
    upper = Partition((CellLabel("upper", sign=1), CellLabel("upper", sign=-1)), assign_upper)
    return lower, upper


def oracle_partition(true_mu0, true_mu1, n_features: int, tie_seed: int = 0) -> Partition:
    """Four-cell rule built from known success-probability functions.

    ``true_mu0`` and ``true_mu1`` are vectorized maps (m, p) -> [0, 1], e.g.
    the exact conditional probabilities of a simulation scenario.
    """
    m0 = FixedFunctionModel(true_mu0, n_features)
    m1 = FixedFunctionModel(true_mu1, n_features)
    return plug_in_partition(m0, m1, tie_seed)


def weighted_bayes_risk(at_labels, y0, y1) -> float:
    """Empirical sum of the two arm-wise misclassification rates.

    ``at_labels`` is an (n, 2) array of (arm, sign) decisions; ``y0``/``y1``
    the potential outcomes. For each arm a, the rate is the fraction of rows
    whose decision differs from (a, Y(a)); the returned risk is their sum,
    minimized by the four-cell rule built from the true probabilities.
    """
    g = np.asarray(at_labels, dtype=np.int64)
    y0 = np.asarray(y0, dtype=np.int64)
    y1 = np.asarray(y1, dtype=np.int64)
    if g.ndim != 2 or g.shape[1] != 2 or not (g.shape[0] == y0.shape[0] == y1.shape[0]):
        raise ParameterError("at_labels must be (n, 2) aligned with the potential outcomes")
    risk = 0.0
    for arm, y in ((0, y0), (1, y1)):
        hit = (g[:, 0] == arm) & (g[:, 1] == y)
        risk += float(np.mean(~hit))
    return risk
