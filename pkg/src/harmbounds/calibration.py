"""Probability calibration: isotonic (PAV) and Platt, with internal cross-fitting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .classifiers import ProbModel, make_fitter, newton_logistic, _sigmoid
from .dataset import Dataset, fold_indices
from .errors import DegeneracyError, ParameterError

__all__ = [
    "StepCalibrator",
    "SigmoidCalibrator",
    "isotonic_regression",
    "pav_fit",
    "platt_fit",
    "calibrate_cv",
    "CalibratedEnsembleModel",
]

PLATT_RIDGE = 1e-6  # keeps the Platt likelihood bounded under separable scores


@dataclass(frozen=True)
class StepCalibrator:
    """Nondecreasing step function fitted by isotonic regression.

    ``breakpoints`` are the strictly ascending distinct training scores;
    ``values`` the fitted level at each. Queries between breakpoints take the
    level of the largest breakpoint below; queries outside the training range
    clamp to the nearest fitted level.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if bp.shape != vals.shape or bp.ndim != 1 or bp.size == 0:
            raise ParameterError("breakpoints and values must be equal-length 1-d arrays")
        if np.any(np.diff(bp) <= 0):
            raise ParameterError("breakpoints must be strictly ascending")
        if np.any(np.diff(vals) < 0) or vals.min() < 0 or vals.max() > 1:
            raise ParameterError("values must be nondecreasing within [0, 1]")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    def __call__(self, scores):
        s = np.asarray(scores, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, s, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return self.values[idx]


@dataclass(frozen=True)
class SigmoidCalibrator:
    """Platt map: score -> sigmoid(slope * score + offset)."""

    slope: float
    offset: float

    def __post_init__(self):
        if not np.isfinite(self.slope) or not np.isfinite(self.offset):
            raise ParameterError("Platt parameters must be finite")

    def __call__(self, scores):
        s = np.asarray(scores, dtype=np.float64)
        return _sigmoid(self.slope * s + self.offset)


def _validate_scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.size == 0 or y.shape != s.shape:
        raise ParameterError("scores and labels must be equal-length nonempty sequences")
    if not np.all(np.isin(y, (0, 1))):
        raise ParameterError("labels must lie in {0, 1}")
    return s, y.astype(np.float64)


def isotonic_regression(y, weights=None) -> np.ndarray:
    """Weighted least-squares fit of a nondecreasing sequence to y.

    Solves min sum w_i (y_i - v_i)^2 over nondecreasing v by the
    pool-adjacent-violators pass: blocks are merged whenever a left block's
    mean exceeds its right neighbor's, and each merged block takes its
    weighted mean.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    if y.ndim != 1 or y.size == 0 or w.shape != y.shape or np.any(w <= 0):
        raise ParameterError("isotonic regression needs 1-d values and positive weights")
    block_sum: list[float] = []
    block_w: list[float] = []
    block_len: list[int] = []
    for value, weight in zip(y, w):
        block_sum.append(value * weight)
        block_w.append(weight)
        block_len.append(1)
        while len(block_sum) >= 2 and (
            block_sum[-2] / block_w[-2] > block_sum[-1] / block_w[-1]
        ):
            block_sum[-2] += block_sum[-1]
            block_w[-2] += block_w[-1]
            block_len[-2] += block_len[-1]
            del block_sum[-1], block_w[-1], block_len[-1]
    return np.repeat([bs / bw for bs, bw in zip(block_sum, block_w)], block_len)


def pav_fit(scores, labels) -> StepCalibrator:
    """Isotonic least-squares fit of P(Y=1 | score) by pool-adjacent-violators.

    Rows with equal scores are pooled into one block first, so the result is a
    function of the score. The fitted levels minimize sum (y_i - w_i)^2 over
    nondecreasing w (in ascending score order) and preserve the label mean.
    """
    s, y = _validate_scores_labels(scores, labels)
    uniq, inverse = np.unique(s, return_inverse=True)
    counts = np.bincount(inverse).astype(np.float64)
    sums = np.bincount(inverse, weights=y)
    values = isotonic_regression(sums / counts, counts)
    return StepCalibrator(uniq, values)


def platt_fit(scores, labels) -> SigmoidCalibrator:
    """Fit sigmoid(slope * score + offset) by maximum likelihood.

    Uses the same damped-Newton routine as the logistic classifier, with a
    tiny ridge term so the fit stays finite when the scores separate the
    labels perfectly.
    """
    s, y = _validate_scores_labels(scores, labels)
    if y.min() == y.max():
        raise DegeneracyError("Platt scaling requires both label classes")
    design = np.column_stack([np.ones_like(s), s])
    pm = 2.0 * y - 1.0
    beta = newton_logistic(design, pm, PLATT_RIDGE, tol=1e-8, max_iter=200)
    return SigmoidCalibrator(slope=float(beta[1]), offset=float(beta[0]))


class CalibratedEnsembleModel(ProbModel):
    """Cross-fitted calibrated classifier.

    Holds one (base model, calibrator) pair per internal fold; the prediction
    is the across-fold mean of calibrator(base(x)), clipped to [0, 1].
    """

    def __init__(self, pairs, n_features, base_kind):
        super().__init__(n_features)
        self.pairs = tuple(pairs)
        self.kind = f"calibrated-{base_kind}"

    def _proba(self, X):
        acc = np.zeros(X.shape[0])
        for base, calibrator in self.pairs:
            acc += np.clip(calibrator(np.atleast_1d(base.predict_proba(X))), 0.0, 1.0)
        return acc / len(self.pairs)

    def state(self):
        parts = []
        for base, calibrator in self.pairs:
            parts.extend(base.state())
            if isinstance(calibrator, StepCalibrator):
                parts.extend((calibrator.breakpoints, calibrator.values))
            else:
                parts.append(np.array([calibrator.slope, calibrator.offset]))
        return tuple(parts)


def calibrate_cv(dataset_or_features, spec, method: str = "isotonic",
                 n_folds: int = 2, rng: np.random.Generator | None = None,
                 labels=None) -> CalibratedEnsembleModel:
    """Fit a classifier with cross-fitted probability calibration.

    For each of ``n_folds`` internal folds, a base model is trained on the
    fold's complement and a calibrator (isotonic or Platt) is fitted to the
    base model's scores on the held-out fold. Accepts either an arm-restricted
    Dataset or a (features, labels) pair; ``spec`` may be a ClassifierSpec,
    kind string, or fitter callable.
    """
    if method not in ("isotonic", "platt"):
        raise ParameterError(f"calibration method must be isotonic or platt, got {method!r}")
    if isinstance(dataset_or_features, Dataset):
        X = dataset_or_features.covariates
        y = dataset_or_features.outcomes
    else:
        if labels is None:
            raise ParameterError("labels are required when passing raw features")
        X = np.asarray(dataset_or_features, dtype=np.float64)
        y = np.asarray(labels)
    n = X.shape[0]
    if n < 2 * n_folds:
        raise ParameterError(f"calibration needs at least 2*{n_folds} samples, got {n}")
    rng = rng or np.random.default_rng()
    fitter = make_fitter(spec)
    fold_of = fold_indices(n, n_folds, rng)
    child_rngs = rng.spawn(n_folds)
    z = (y == 1).astype(np.float64)

    pairs = []
    base_kind = "?"
    for k in range(n_folds):
        train = fold_of != k
        held = ~train
        try:
            base = fitter(X[train], y[train], child_rngs[k])
            scores = np.atleast_1d(base.predict_proba(X[held]))
            if method == "isotonic":
                calibrator = pav_fit(scores, z[held])
            else:
                calibrator = platt_fit(scores, z[held])
        except DegeneracyError as exc:
            warnings.warn(f"calibration fold {k} skipped: {exc}")
            continue
        base_kind = base.kind
        pairs.append((base, calibrator))
    if not pairs:
        raise DegeneracyError("every calibration fold was degenerate")
    return CalibratedEnsembleModel(pairs, X.shape[1], base_kind)
