"""Monte-Carlo confidence intervals for the estimated harm-rate bounds.

The sampling distributions of the estimated lower and upper bounds are
approximated by (1) redrawing the cell occupancy vector from a multivariate
hypergeometric distribution and (2) redrawing each cell's arm-wise success
frequencies from normals centered at the observed frequencies with the
occupancy-rescaled sampling variances. Quantiles of the simulated
distributions give reflected confidence intervals, and a Bonferroni
combination of the two one-sided pieces yields a conservative interval for
the harm rate itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import BoundsEstimate, CellStats
from .errors import InvariantError, ParameterError

__all__ = [
    "BoundDistributions",
    "IntervalSet",
    "sample_cell_sizes",
    "occupancy_scaled_variances",
    "simulate_bound_distributions",
    "confidence_intervals",
    "upper_quantile",
]

DEFAULT_DRAWS = 10_000


def sample_cell_sizes(n: int, counts, draws: int, rng: np.random.Generator,
                      M: int | None = None) -> np.ndarray:
    """Redraw cell occupancies from a multivariate hypergeometric population.

    The finite population has ``counts[j] * M / n`` items of color j (rounded,
    any rounding residual assigned to the largest stratum) with M defaulting
    to 100 * n; each of the ``draws`` rows is a sample of n items and sums to
    n exactly.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() != n:
        raise ParameterError("cell counts must sum to n")
    if np.any(counts < 0) or draws < 1:
        raise ParameterError("counts must be nonnegative and draws >= 1")
    if M is None:
        M = 100 * n
    if M < n:
        raise ParameterError("population size M must be at least n")
    strata = np.rint(counts * (M / n)).astype(np.int64)
    residual = M - strata.sum()
    strata[np.argmax(counts)] += residual
    if strata.min() < 0:
        raise ParameterError("population size M too small for the given counts")
    return rng.multivariate_hypergeometric(strata, n, size=draws)


@dataclass(frozen=True)
class BoundDistributions:
    """Simulated draws of the estimated lower and upper bound."""

    lower: np.ndarray
    upper: np.ndarray
    resampled: int  # draws rejected for a non-positive variance denominator


def occupancy_scaled_variances(n_j, n_aj, ss, nstar):
    """Sampling variances of the cell frequencies under redrawn occupancies.

    For each occupancy draw, arm counts are rescaled to n~ = n* n_aj / n_j
    and the variance of the arm frequency is ss / (n~ (n~ - 1)), where ss is
    the observed within-cell sum of squares of the favorable indicator.
    Returns (variances, invalid): variances is (draws, 2, J), nonnegative and
    exactly zero wherever the arm-cell outcome is constant; invalid flags the
    draws whose needed denominator n~ (n~ - 1) is not positive.
    """
    n_j = np.asarray(n_j, dtype=np.float64)
    n_aj = np.asarray(n_aj, dtype=np.float64)
    ss = np.asarray(ss, dtype=np.float64)
    nstar = np.asarray(nstar, dtype=np.float64)
    ntil = nstar[:, None, :] * (n_aj / n_j)[None, :, :]
    denom = ntil * (ntil - 1.0)
    needed = (nstar[:, None, :] > 0) & (ss[None, :, :] > 0)
    invalid = (needed & (denom <= 0)).any(axis=(1, 2))
    variances = np.zeros_like(denom)
    ok = needed & (denom > 0)
    variances[ok] = np.broadcast_to(ss, denom.shape)[ok] / denom[ok]
    return variances, invalid


def simulate_bound_distributions(stats: CellStats, draws: int = DEFAULT_DRAWS,
                                 rng: np.random.Generator | None = None,
                                 M: int | None = None) -> BoundDistributions:
    """Simulate the sampling distributions of the two bound estimators.

    Requires every nonempty cell to carry both arms (merge degenerate cells
    first). For each draw b and cell j, the simulated arm count is
    n*_bj * n_aj / n_j; draws where some needed variance denominator
    n~ (n~ - 1) is not positive are rejected and redrawn, with the number of
    rejections reported.
    """
    rng = rng or np.random.default_rng()
    if stats.degenerate_cells():
        raise ParameterError("degenerate cells must be merged before simulation")
    keep = np.flatnonzero(stats.n_j > 0)
    if keep.size == 0:
        raise ParameterError("no nonempty cells")
    n = stats.n
    n_j = stats.n_j[keep].astype(np.float64)
    n_aj = stats.n_aj[:, keep].astype(np.float64)
    mu = stats.mu_hat[:, keep]
    ss = stats.ss[:, keep]

    def draw_block(size: int):
        nstar = sample_cell_sizes(n, stats.n_j[keep], size, rng, M=M).astype(np.float64)
        sigma2, invalid = occupancy_scaled_variances(n_j, n_aj, ss, nstar)
        return nstar, sigma2, invalid

    rejected = 0
    nstar, sigma2, invalid = draw_block(draws)
    rounds = 0
    while invalid.any():
        rounds += 1
        if rounds > 1000:
            raise InvariantError("occupancy resampling failed to produce valid draws")
        rejected += int(invalid.sum())
        redraw, s2new, inv2 = draw_block(int(invalid.sum()))
        idx = np.flatnonzero(invalid)
        nstar[idx] = redraw
        sigma2[idx] = s2new
        invalid[idx] = inv2

    weights = nstar / n  # (B, J)
    B = draws
    # lower bound: sum_j w_j * max(0, N(mu0j - mu1j, s0j^2 + s1j^2))
    diff_sd = np.sqrt(sigma2[:, 0, :] + sigma2[:, 1, :])
    diffs = mu[0] - mu[1] + rng.standard_normal((B, len(keep))) * diff_sd
    lower = (weights * np.maximum(0.0, diffs)).sum(axis=1)
    # upper bound: sum_j w_j * min(N(mu0j, s0j^2), 1 - N(mu1j, s1j^2))
    draw0 = mu[0] + rng.standard_normal((B, len(keep))) * np.sqrt(sigma2[:, 0, :])
    draw1 = mu[1] + rng.standard_normal((B, len(keep))) * np.sqrt(sigma2[:, 1, :])
    upper = (weights * np.minimum(draw0, 1.0 - draw1)).sum(axis=1)
    return BoundDistributions(lower, upper, rejected)


def upper_quantile(samples: np.ndarray, alpha: float) -> float:
    """Empirical alpha-upper-quantile by order statistics (no interpolation)."""
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    x = np.sort(np.asarray(samples))
    B = len(x)
    rank = int(np.ceil(B * (1.0 - alpha)))
    return float(x[min(max(rank, 1), B) - 1])


@dataclass(frozen=True)
class IntervalSet:
    """Reflected confidence intervals for the two bounds plus the extension.

    ``extended`` combines the lower interval's left endpoint with the upper
    interval's right endpoint (Bonferroni), a conservative interval for the
    harm rate itself. All endpoints are clipped to [0, 1].
    """

    ci_lower_bound: tuple
    ci_upper_bound: tuple
    extended: tuple
    alpha: float

    def __post_init__(self):
        for name in ("ci_lower_bound", "ci_upper_bound", "extended"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi <= 1):
                raise ParameterError(f"{name} endpoints must be ordered within [0, 1]")

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "ci_lower_bound": list(self.ci_lower_bound),
            "ci_upper_bound": list(self.ci_upper_bound),
            "extended": list(self.extended),
        }


def _clip_pair(lo: float, hi: float) -> tuple:
    lo = min(max(lo, 0.0), 1.0)
    hi = min(max(hi, 0.0), 1.0)
    return (lo, max(lo, hi))


def confidence_intervals(dists: BoundDistributions, estimate: BoundsEstimate,
                         alpha: float) -> IntervalSet:
    """Reflected-quantile intervals at level 1 - alpha.

    For each bound, the (alpha/2)- and (1 - alpha/2)-upper-quantiles of its
    simulated distribution are reflected around twice the point estimate.
    """
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if len(dists.lower) == 0 or len(dists.upper) == 0:
        raise ParameterError("empty simulated distributions")
    lo_L = 2 * estimate.lower - upper_quantile(dists.lower, alpha / 2)
    hi_L = 2 * estimate.lower - upper_quantile(dists.lower, 1 - alpha / 2)
    lo_U = 2 * estimate.upper - upper_quantile(dists.upper, alpha / 2)
    hi_U = 2 * estimate.upper - upper_quantile(dists.upper, 1 - alpha / 2)
    ci_L = _clip_pair(lo_L, hi_L)
    ci_U = _clip_pair(lo_U, hi_U)
    extended = _clip_pair(ci_L[0], ci_U[1])
    return IntervalSet(ci_L, ci_U, extended, alpha)
