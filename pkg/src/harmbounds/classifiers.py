"""From-scratch probabilistic classifiers for arm-wise outcome models.

All fitters take features (m, p), labels in {-1, +1} and return an immutable
model exposing ``predict_proba``, the estimated P(Y = +1 | x). Training rows
are canonically sorted before any seeded randomness is consumed, so KNN and
forest fits do not depend on the input row order.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dataset import Dataset, fold_indices
from .errors import (
    ConvergenceError,
    DegeneracyError,
    DomainError,
    ParameterError,
    ShapeError,
)

__all__ = [
    "ProbModel",
    "ForestConfig",
    "ClassifierSpec",
    "fit_logistic",
    "fit_gnb",
    "fit_knn",
    "fit_forest",
    "predict_proba",
    "cv_misclassification",
    "make_fitter",
    "state_digest",
    "FixedFunctionModel",
    "ConstantModel",
]


def _as_matrix(x, p: int):
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != p:
        raise ShapeError(f"expected covariate dimension {p}, got shape {np.shape(x)}")
    return X, single


def _validate_training(features, labels):
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError("features must be a nonempty (m, p) array")
    if y.shape != (X.shape[0],):
        raise ParameterError("labels must align with features")
    if not np.all(np.isin(y, (-1, 1))):
        raise DomainError("labels must lie in {-1, +1}")
    if not np.all(np.isfinite(X)):
        raise DomainError("features must be finite")
    return X, y


def _canonical_order(X, y):
    """Sort rows lexicographically by coordinates, then label."""
    keys = (y,) + tuple(X[:, j] for j in reversed(range(X.shape[1])))
    return np.lexsort(keys)


def _sigmoid(t):
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class ProbModel:
    """Fitted probabilistic classifier: p(x) = estimated P(Y = +1 | x)."""

    kind: str = "base"

    def __init__(self, n_features: int):
        self.n_features = int(n_features)

    def _proba(self, X):  # pragma: no cover - abstract
        raise NotImplementedError

    def predict_proba(self, x):
        X, single = _as_matrix(x, self.n_features)
        p = np.clip(self._proba(X), 0.0, 1.0)
        return float(p[0]) if single else p

    def state(self) -> tuple:
        raise NotImplementedError


def state_digest(model: ProbModel) -> str:
    """Stable digest of a fitted model's state, for independence checks."""
    h = hashlib.blake2b(digest_size=16)
    h.update(model.kind.encode())
    for part in model.state():
        arr = np.ascontiguousarray(part)
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# logistic regression (damped Newton on the ridge-penalized log-likelihood)
# ---------------------------------------------------------------------------


def newton_logistic(design, y, ridge, tol=1e-8, max_iter=100):
    """Minimize mean(log(1 + exp(-y * Xb))) + (ridge/2)||b||^2.

    Returns the coefficient vector once the gradient norm falls below ``tol``;
    raises ConvergenceError (carrying the final gradient norm) at the
    iteration cap. Every coordinate, including any intercept column, is
    penalized, which keeps the optimum finite even when one class is absent.
    """
    m, d = design.shape
    b = np.zeros(d)

    def objective(bv):
        return float(np.mean(np.logaddexp(0.0, -y * (design @ bv))) + 0.5 * ridge * (bv @ bv))

    f_cur = objective(b)
    gnorm = math.inf
    for _ in range(max_iter):
        z = design @ b
        s = _sigmoid(-y * z)
        grad = -(design.T @ (y * s)) / m + ridge * b
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return b
        w = _sigmoid(z) * _sigmoid(-z)
        H = (design.T * w) @ design / m + ridge * np.eye(d)
        try:
            direction = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(H, grad, rcond=None)[0]
        slope = float(grad @ direction)
        if not np.isfinite(slope) or slope <= 0.0:
            direction = grad
            slope = float(grad @ grad)
        step = 1.0
        while step >= 2.0**-40:
            candidate = b - step * direction
            f_new = objective(candidate)
            if f_new <= f_cur - 1e-4 * step * slope:
                b = candidate
                f_cur = f_new
                break
            step *= 0.5
        else:
            break
    raise ConvergenceError(
        f"logistic solver did not reach gradient norm {tol:g} "
        f"(final gradient norm {gnorm:.3e})",
        gradient_norm=gnorm,
    )


def logistic_objective_grad(design, y, ridge, b):
    """Objective value and analytic gradient at b (used by tests)."""
    m = design.shape[0]
    z = design @ b
    obj = float(np.mean(np.logaddexp(0.0, -y * z)) + 0.5 * ridge * (b @ b))
    s = _sigmoid(-y * z)
    grad = -(design.T @ (y * s)) / m + ridge * b
    return obj, grad


class LogisticModel(ProbModel):
    kind = "logit"

    def __init__(self, beta, n_features):
        super().__init__(n_features)
        self.beta = np.asarray(beta, dtype=np.float64)

    def _proba(self, X):
        return _sigmoid(self.beta[0] + X @ self.beta[1:])

    def state(self):
        return (self.beta,)


def fit_logistic(features, labels, ridge: float = 1e-4, *, tol: float = 1e-8,
                 max_iter: int = 100) -> LogisticModel:
    """Fit a ridge-penalized logistic model by damped Newton iteration.

    An intercept column is prepended internally. With ridge = 0 both label
    classes must be present (otherwise the likelihood has no maximizer).
    """
    X, y = _validate_training(features, labels)
    if ridge < 0:
        raise ParameterError("ridge penalty must be nonnegative")
    if ridge == 0 and len(np.unique(y)) < 2:
        raise DegeneracyError("unpenalized logistic fit requires both label classes")
    design = np.hstack([np.ones((X.shape[0], 1)), X])
    beta = newton_logistic(design, y.astype(np.float64), ridge, tol=tol, max_iter=max_iter)
    return LogisticModel(beta, X.shape[1])


# ---------------------------------------------------------------------------
# Gaussian naive Bayes
# ---------------------------------------------------------------------------

VARIANCE_FLOOR_RATIO = 1e-9


class GaussianNBModel(ProbModel):
    kind = "gnb"

    def __init__(self, log_priors, means, variances, n_features):
        super().__init__(n_features)
        self.log_priors = np.asarray(log_priors, dtype=np.float64)  # (2,) order (-1, +1)
        self.means = np.asarray(means, dtype=np.float64)  # (2, p)
        self.variances = np.asarray(variances, dtype=np.float64)  # (2, p)

    def _class_loglik(self, X, c):
        v = self.variances[c]
        quad = ((X - self.means[c]) ** 2 / v).sum(axis=1)
        return self.log_priors[c] - 0.5 * (np.log(2.0 * np.pi * v).sum() + quad)

    def _proba(self, X):
        return _sigmoid(self._class_loglik(X, 1) - self._class_loglik(X, 0))

    def state(self):
        return (self.log_priors, self.means, self.variances)


def fit_gnb(features, labels) -> GaussianNBModel:
    """Gaussian naive Bayes: empirical priors, per-coordinate normal densities.

    Per-class variances are floored at 1e-9 times the largest pooled
    per-coordinate variance so constant features cannot zero out a density.
    """
    X, y = _validate_training(features, labels)
    if not ((y == -1).any() and (y == 1).any()):
        raise DegeneracyError("Gaussian naive Bayes requires both label classes")
    pooled = X.var(axis=0).max()
    floor = VARIANCE_FLOOR_RATIO * pooled if pooled > 0 else VARIANCE_FLOOR_RATIO
    means = np.empty((2, X.shape[1]))
    variances = np.empty((2, X.shape[1]))
    log_priors = np.empty(2)
    for c, lab in enumerate((-1, 1)):
        rows = X[y == lab]
        means[c] = rows.mean(axis=0)
        variances[c] = np.maximum(rows.var(axis=0), floor)
        log_priors[c] = np.log(rows.shape[0] / X.shape[0])
    return GaussianNBModel(log_priors, means, variances, X.shape[1])


# ---------------------------------------------------------------------------
# K nearest neighbors
# ---------------------------------------------------------------------------


class KNNModel(ProbModel):
    kind = "knn"

    def __init__(self, points, labels01, k, tie_key, n_features):
        super().__init__(n_features)
        self.points = np.asarray(points, dtype=np.float64)
        self.labels01 = np.asarray(labels01, dtype=np.float64)
        self.k = int(k)
        self.tie_key = np.asarray(tie_key, dtype=np.int64)

    def _proba(self, X):
        out = np.empty(X.shape[0])
        for i, q in enumerate(X):
            d = ((self.points - q) ** 2).sum(axis=1)
            order = np.lexsort((self.tie_key, d))
            out[i] = self.labels01[order[: self.k]].mean()
        return out

    def state(self):
        return (self.points, self.labels01, np.array([self.k]), self.tie_key)


def fit_knn(features, labels, k: int | None = None, rng: np.random.Generator | None = None) -> KNNModel:
    """K-nearest-neighbor vote share of the favorable label.

    Distance ties are broken by a seeded shuffle applied over the canonical
    (lexicographically pre-sorted) row order; k defaults to ceil(sqrt(m)).
    """
    X, y = _validate_training(features, labels)
    m = X.shape[0]
    if k is None:
        k = math.ceil(math.sqrt(m))
    if not 1 <= k <= m:
        raise ParameterError(f"k must lie in [1, {m}], got {k}")
    rng = rng or np.random.default_rng()
    order = _canonical_order(X, y)
    tie_key = rng.permutation(m)
    return KNNModel(X[order], (y[order] == 1).astype(np.float64), k, tie_key, X.shape[1])


# ---------------------------------------------------------------------------
# random forest (Gini-grown classification trees on bootstrap resamples)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    min_leaf: int = 5
    max_depth: int | None = None
    features_per_split: int | None = None  # default: ceil(sqrt(p))

    def __post_init__(self):
        if self.n_trees < 1:
            raise ParameterError("n_trees must be at least 1")
        if self.min_leaf < 1:
            raise ParameterError("min_leaf must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ParameterError("max_depth must be nonnegative")


@njit(cache=True)
def _grow_tree(X, z, min_leaf, max_depth, n_cand, seed):  # pragma: no cover - jit
    np.random.seed(seed)
    m, p = X.shape
    boot = np.random.randint(0, m, m)
    max_nodes = 2 * m + 1
    feat = np.full(max_nodes, -1, dtype=np.int64)
    thr = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    val = np.zeros(max_nodes, dtype=np.float64)

    order = boot.copy()
    stack_node = np.empty(max_nodes, dtype=np.int64)
    stack_lo = np.empty(max_nodes, dtype=np.int64)
    stack_hi = np.empty(max_nodes, dtype=np.int64)
    stack_depth = np.empty(max_nodes, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    buf = np.empty(m, dtype=np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        m_node = hi - lo
        s = 0.0
        for i in range(lo, hi):
            s += z[order[i]]
        if (
            s == 0.0
            or s == m_node
            or m_node < 2 * min_leaf
            or (max_depth >= 0 and depth >= max_depth)
        ):
            val[node] = s / m_node
            continue

        perm = np.random.permutation(p)
        best_imp = np.inf
        best_f = -1
        best_thr = 0.0
        v = np.empty(m_node, dtype=np.float64)
        for ci in range(n_cand):
            f = perm[ci]
            for i in range(m_node):
                v[i] = X[order[lo + i], f]
            sidx = np.argsort(v)
            cum = 0.0
            for i in range(m_node - 1):
                cum += z[order[lo + sidx[i]]]
                nl = i + 1
                nr = m_node - nl
                if nr < min_leaf:
                    break
                if nl < min_leaf:
                    continue
                vi = v[sidx[i]]
                vn = v[sidx[i + 1]]
                if vi == vn:
                    continue
                sl = cum
                sr = s - cum
                imp = sl * (nl - sl) / nl + sr * (nr - sr) / nr
                if imp < best_imp:
                    best_imp = imp
                    best_f = f
                    best_thr = 0.5 * (vi + vn)
        if best_f < 0:
            val[node] = s / m_node
            continue

        nl_total = 0
        for i in range(lo, hi):
            if X[order[i], best_f] <= best_thr:
                nl_total += 1
        li = 0
        ri = nl_total
        for i in range(lo, hi):
            row = order[i]
            if X[row, best_f] <= best_thr:
                buf[li] = row
                li += 1
            else:
                buf[ri] = row
                ri += 1
        for i in range(m_node):
            order[lo + i] = buf[i]

        feat[node] = best_f
        thr[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = lo + nl_total
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = n_nodes + 1
        stack_lo[top] = lo + nl_total
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        n_nodes += 2

    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], val[:n_nodes], boot


@njit(cache=True)
def _tree_predict(X, feat, thr, left, right, val, out):  # pragma: no cover - jit
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = val[node]


class ForestModel(ProbModel):
    kind = "forest"

    def __init__(self, trees, bootstraps, config, n_features):
        super().__init__(n_features)
        self.trees = tuple(trees)
        self.bootstraps = tuple(bootstraps)
        self.config = config

    def predict_per_tree(self, x):
        """(n_trees, m) matrix of per-tree leaf fractions."""
        X, _ = _as_matrix(x, self.n_features)
        out = np.empty((len(self.trees), X.shape[0]))
        buf = np.empty(X.shape[0])
        for t, (feat, thr, left, right, val) in enumerate(self.trees):
            _tree_predict(X, feat, thr, left, right, val, buf)
            out[t] = buf
        return out

    def _proba(self, X):
        return self.predict_per_tree(X).mean(axis=0)

    def state(self):
        parts = []
        for tree in self.trees:
            parts.extend(tree)
        return tuple(parts)


def fit_forest(features, labels, config: ForestConfig | None = None,
               rng: np.random.Generator | None = None) -> ForestModel:
    """Random forest of Gini-grown trees, each on its own bootstrap resample.

    Every tree consumes an independently drawn integer seed, so fits are
    reproducible from ``rng`` regardless of evaluation order. Predictions
    average the per-tree leaf fractions of the favorable label.
    """
    config = config or ForestConfig()
    X, y = _validate_training(features, labels)
    m, p = X.shape
    if m < config.min_leaf:
        raise ParameterError("training set smaller than min_leaf")
    rng = rng or np.random.default_rng()
    order = _canonical_order(X, y)
    Xc = np.ascontiguousarray(X[order])
    zc = (y[order] == 1).astype(np.float64)
    n_cand = config.features_per_split or math.ceil(math.sqrt(p))
    n_cand = min(max(1, n_cand), p)
    depth_cap = -1 if config.max_depth is None else config.max_depth
    seeds = rng.integers(0, 2**31 - 1, size=config.n_trees)
    trees = []
    boots = []
    for seed in seeds:
        feat, thr, left, right, val, boot = _grow_tree(
            Xc, zc, config.min_leaf, depth_cap, n_cand, int(seed)
        )
        trees.append((feat, thr, left, right, val))
        boots.append(boot)
    model = ForestModel(trees, boots, config, p)
    model._train_points = Xc  # kept for tests that audit split decisions
    model._train_labels01 = zc
    return model


# ---------------------------------------------------------------------------
# fixed models, specs, evaluation
# ---------------------------------------------------------------------------


class FixedFunctionModel(ProbModel):
    """Wraps a vectorized probability function as a ProbModel (oracles, tests)."""

    kind = "fixed"

    def __init__(self, fn, n_features):
        super().__init__(n_features)
        self.fn = fn

    def _proba(self, X):
        return np.asarray(self.fn(X), dtype=np.float64)

    def state(self):
        return (np.frombuffer(repr(self.fn).encode(), dtype=np.uint8),)


class ConstantModel(ProbModel):
    kind = "constant"

    def __init__(self, value, n_features):
        super().__init__(n_features)
        self.value = float(value)

    def _proba(self, X):
        return np.full(X.shape[0], self.value)

    def state(self):
        return (np.array([self.value]),)


@dataclass(frozen=True)
class ClassifierSpec:
    """Serializable classifier choice: {kind, hyperparameters}."""

    kind: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj) -> "ClassifierSpec":
        return cls(obj["kind"], dict(obj.get("params", {})))


def make_fitter(spec):
    """Resolve a ClassifierSpec (or kind string, or callable) to a fitter.

    A fitter is ``f(features, labels, rng) -> ProbModel``.
    """
    if callable(spec):
        return spec
    if isinstance(spec, str):
        spec = ClassifierSpec(spec)
    elif isinstance(spec, dict):
        spec = ClassifierSpec.from_json(spec)
    params = spec.params
    if spec.kind == "logit":
        ridge = params.get("ridge", 1e-4)
        return lambda X, y, rng: fit_logistic(X, y, ridge)
    if spec.kind == "gnb":
        return lambda X, y, rng: fit_gnb(X, y)
    if spec.kind == "knn":
        k = params.get("k")
        return lambda X, y, rng: fit_knn(X, y, k, rng)
    if spec.kind == "forest":
        config = ForestConfig(
            n_trees=params.get("n_trees", 100),
            min_leaf=params.get("min_leaf", 5),
            max_depth=params.get("max_depth"),
            features_per_split=params.get("features_per_split"),
        )
        return lambda X, y, rng: fit_forest(X, y, config, rng)
    raise ParameterError(f"unknown classifier kind {spec.kind!r}")


def predict_proba(model: ProbModel, x):
    """Evaluate a fitted model; raises ShapeError on dimension mismatch."""
    return model.predict_proba(x)


def cv_misclassification(dataset: Dataset, spec, n_folds: int = 5,
                         rng: np.random.Generator | None = None) -> float:
    """K-fold out-of-fold misclassification rate at probability threshold 0.5.

    ``dataset`` should already be restricted to one arm. Folds whose training
    split cannot support the classifier (single outcome class where both are
    required) are skipped with a warning and excluded from the average.
    """
    rng = rng or np.random.default_rng()
    fitter = make_fitter(spec)
    X = dataset.covariates
    y = dataset.outcomes
    fold_of = fold_indices(dataset.n, n_folds, rng)
    child_rngs = rng.spawn(n_folds)
    rates = []
    for k in range(n_folds):
        train = fold_of != k
        test = ~train
        try:
            model = fitter(X[train], y[train], child_rngs[k])
        except DegeneracyError as exc:
            warnings.warn(f"fold {k} skipped in misclassification average: {exc}")
            continue
        p = np.atleast_1d(model.predict_proba(X[test]))
        predicted = np.where(p >= 0.5, 1, -1)
        rates.append(float(np.mean(predicted != y[test])))
    if not rates:
        raise DegeneracyError("every fold was degenerate; no misclassification estimate")
    return float(np.mean(rates))
