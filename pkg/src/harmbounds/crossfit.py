"""K-fold cross-fitted estimation: nuisance models and the partition are built
on each fold's complement, bounds and intervals are estimated on the fold, and
the K results are averaged endpoint-wise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundsEstimate, CellStats, estimate_with_merging, plug_in_bounds
from .calibration import calibrate_cv
from .classifiers import make_fitter
from .dataset import Dataset, split_folds
from .errors import ParameterError
from .inference import (
    DEFAULT_DRAWS,
    IntervalSet,
    confidence_intervals,
    simulate_bound_distributions,
)
from .partitioning import Partition, plug_in_partition

__all__ = ["FoldResult", "AggregatedResult", "crossfit_estimate", "estimate_fixed_partition"]


def _as_alphas(alpha) -> tuple:
    alphas = (alpha,) if np.isscalar(alpha) else tuple(alpha)
    if not alphas:
        raise ParameterError("at least one alpha level is required")
    return alphas


@dataclass
class FoldResult:
    fold: int
    train_indices: np.ndarray
    eval_indices: np.ndarray
    bounds: BoundsEstimate
    plugin: BoundsEstimate | None
    intervals: dict  # alpha -> IntervalSet (empty when CIs are disabled)
    stats: CellStats
    merges: list
    model_seeds: tuple  # (seed for mu0, seed for mu1)
    models: tuple = field(repr=False, default=(None, None))

    def cell_summary(self) -> list[dict]:
        out = []
        for j, label in enumerate(self.stats.labels):
            if self.stats.n_j[j] == 0:
                continue
            out.append(
                {
                    "cell": str(label),
                    "share": float(self.stats.n_j[j] / self.stats.n),
                    "n": int(self.stats.n_j[j]),
                    "n_control": int(self.stats.n_aj[0, j]),
                    "n_treated": int(self.stats.n_aj[1, j]),
                    "mu0_hat": float(self.stats.mu_hat[0, j]),
                    "mu1_hat": float(self.stats.mu_hat[1, j]),
                }
            )
        return out


@dataclass
class AggregatedResult:
    """Across-fold means plus the per-fold detail."""

    bounds: BoundsEstimate
    plugin: BoundsEstimate | None
    intervals: dict  # alpha -> IntervalSet
    folds: list[FoldResult]
    K: int

    def interval(self, alpha: float) -> IntervalSet | None:
        return self.intervals.get(alpha)

    def to_json(self) -> dict:
        def ivs(obj):
            return {repr(a): iv.to_json() for a, iv in obj.items()} or None

        return {
            "k_folds": self.K,
            "partition_bounds": self.bounds.to_json(),
            "plugin_bounds": self.plugin.to_json() if self.plugin else None,
            "intervals": ivs(self.intervals),
            "merged_cells": [m for f in self.folds for m in f.merges],
            "folds": [
                {
                    "fold": f.fold,
                    "n_eval": int(len(f.eval_indices)),
                    "partition_bounds": f.bounds.to_json(),
                    "plugin_bounds": f.plugin.to_json() if f.plugin else None,
                    "intervals": ivs(f.intervals),
                    "merged_cells": list(f.merges),
                    "cells": f.cell_summary(),
                }
                for f in self.folds
            ],
        }


def _mean_bounds(items: list[BoundsEstimate]) -> BoundsEstimate:
    return BoundsEstimate(
        float(np.mean([b.lower for b in items])),
        float(np.mean([b.upper for b in items])),
    )


def _mean_intervals(items: list[IntervalSet]) -> IntervalSet:
    def mean_pair(name):
        pairs = [getattr(iv, name) for iv in items]
        return (
            float(np.mean([p[0] for p in pairs])),
            float(np.mean([p[1] for p in pairs])),
        )

    return IntervalSet(
        mean_pair("ci_lower_bound"),
        mean_pair("ci_upper_bound"),
        mean_pair("extended"),
        items[0].alpha,
    )


def _aggregate_intervals(folds: list[FoldResult], alphas) -> dict:
    out = {}
    for a in alphas:
        per_fold = [f.intervals[a] for f in folds if a in f.intervals]
        if per_fold:
            out[a] = _mean_intervals(per_fold)
    return out


def _evaluate_on(dataset: Dataset, partition: Partition, alphas, ci_draws, with_ci, rng):
    est, stats, merges = estimate_with_merging(dataset, partition)
    intervals = {}
    if with_ci:
        dists = simulate_bound_distributions(stats, ci_draws, rng)
        intervals = {a: confidence_intervals(dists, est, a) for a in alphas}
    return est, stats, merges, intervals


def estimate_fixed_partition(dataset: Dataset, partition: Partition, alpha=0.25,
                             rng: np.random.Generator | None = None,
                             ci_draws: int = DEFAULT_DRAWS,
                             with_ci: bool = True,
                             ci_seed: int | None = None) -> AggregatedResult:
    """Estimate bounds on the full sample under an a-priori fixed partition."""
    dataset.require_both_arms()
    rng = rng or np.random.default_rng()
    if ci_seed is not None:
        rng = np.random.default_rng(ci_seed)
    alphas = _as_alphas(alpha)
    est, stats, merges, intervals = _evaluate_on(
        dataset, partition, alphas, ci_draws, with_ci, rng
    )
    fold = FoldResult(
        fold=0,
        train_indices=np.arange(0),
        eval_indices=np.arange(dataset.n),
        bounds=est,
        plugin=None,
        intervals=intervals,
        stats=stats,
        merges=merges,
        model_seeds=(),
    )
    return AggregatedResult(est, None, intervals, [fold], K=0)


def crossfit_estimate(dataset: Dataset, K: int, spec, calibrate: str = "none",
                      alpha=0.25, rng: np.random.Generator | None = None,
                      ci_draws: int = DEFAULT_DRAWS, with_ci: bool = True,
                      calibration_folds: int | None = None,
                      ci_seed: int | None = None) -> AggregatedResult:
    """K-fold cross-fitted partition bounds with plug-in comparator.

    For each fold, both arm-wise models are fitted on the fold's complement
    (optionally wrapped in cross-fitted calibration), a four-cell partition is
    built from them, and bounds, plug-in bounds and confidence intervals are
    computed on the held-out fold. Fold results are averaged endpoint-wise.
    Every random component is seeded from ``rng`` up front, so a fold's models
    are a pure function of its training rows and recorded seeds.
    """
    if K < 2:
        raise ParameterError("cross-fitting requires K >= 2")
    if calibrate not in ("none", "isotonic", "platt"):
        raise ParameterError(f"unknown calibration method {calibrate!r}")
    dataset.require_both_arms()
    rng = rng or np.random.default_rng()
    alphas = _as_alphas(alpha)

    # fixed-order seed derivation: folds, then per-fold (mu0, mu1, tie, ci)
    fold_seed = int(rng.integers(2**63))
    per_fold = rng.integers(2**63, size=(K, 4))
    assignment = split_folds(dataset, K, np.random.default_rng(fold_seed))

    folds: list[FoldResult] = []
    for f in range(K):
        train_idx = assignment.complement(f)
        eval_idx = assignment.indices(f)
        train = dataset.subset(train_idx)
        train.require_both_arms()
        seeds = tuple(int(s) for s in per_fold[f])
        models = []
        for arm in (0, 1):
            arm_data = train.restrict(arm)
            arm_rng = np.random.default_rng(seeds[arm])
            if calibrate == "none":
                model = make_fitter(spec)(arm_data.covariates, arm_data.outcomes, arm_rng)
            else:
                model = calibrate_cv(
                    arm_data, spec, method=calibrate,
                    n_folds=calibration_folds or K, rng=arm_rng,
                )
            models.append(model)
        partition = plug_in_partition(models[0], models[1], tie_seed=seeds[2])
        eval_data = dataset.subset(eval_idx)
        ci_rng = np.random.default_rng(seeds[3] if ci_seed is None else (ci_seed, f))
        est, stats, merges, intervals = _evaluate_on(
            eval_data, partition, alphas, ci_draws, with_ci, ci_rng,
        )
        plugin = plug_in_bounds(models[0], models[1], eval_data)
        folds.append(
            FoldResult(
                fold=f,
                train_indices=train_idx,
                eval_indices=eval_idx,
                bounds=est,
                plugin=plugin,
                intervals=intervals,
                stats=stats,
                merges=merges,
                model_seeds=seeds[:2],
                models=tuple(models),
            )
        )

    aggregate = _mean_bounds([f.bounds for f in folds])
    plugin = _mean_bounds([f.plugin for f in folds])
    intervals = _aggregate_intervals(folds, alphas) if with_ci else {}
    return AggregatedResult(aggregate, plugin, intervals, folds, K=K)
