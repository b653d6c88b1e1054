"""Partition-based interval estimation of the treatment harm rate.

The treatment harm rate of a binary-outcome randomized trial is the
probability that an individual would do well under control but poorly under
treatment. It is not point-identifiable, but it is bracketed cell-by-cell
over any partition of covariate space; this package builds such partitions
from probabilistic classifiers, estimates the resulting bounds with
cross-fitting, and attaches Monte-Carlo confidence intervals.
"""

__version__ = "0.1.0"

from .bounds import BoundsEstimate, CellStats, cell_stats, estimate_bounds, plug_in_bounds
from .calibration import calibrate_cv, pav_fit, platt_fit
from .classifiers import (
    ClassifierSpec,
    ForestConfig,
    cv_misclassification,
    fit_forest,
    fit_gnb,
    fit_knn,
    fit_logistic,
    predict_proba,
)
from .crossfit import AggregatedResult, crossfit_estimate, estimate_fixed_partition
from .dataset import ColumnSchema, Dataset, FoldAssignment, Sample, load_csv, split_folds, write_csv
from .errors import HarmboundsError
from .inference import confidence_intervals, sample_cell_sizes, simulate_bound_distributions
from .partitioning import (
    CellLabel,
    Partition,
    naive_partition,
    oracle_partition,
    plug_in_partition,
    two_cell_partitions,
    weighted_bayes_risk,
)
from .simulation import (
    Scenario,
    generate,
    oracle_mu,
    population_truths,
    run_monte_carlo,
    run_sigma_sweep,
    solve_intercept,
    true_theta,
)
