"""Synthetic randomized-trial generator and Monte-Carlo experiment harness.

Covariates are standard 10-variate normal. Each arm's binary outcome is the
sign of a nonlinear index of the first five covariates plus independent
Gaussian noise; the arm intercepts are calibrated once, on the noise-free
index, so that the favorable-outcome rates hit 20% (control) and 40%
(treated) in the noiseless limit, and are then held fixed while the noise
scale varies. Treatment is assigned by complete randomization with half the
sample treated.
"""

from __future__ import annotations

import dataclasses
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .classifiers import ClassifierSpec, cv_misclassification
from .crossfit import crossfit_estimate, estimate_fixed_partition
from .dataset import Dataset
from .errors import HarmboundsError, ParameterError, SolverError
from .partitioning import naive_partition, oracle_partition

__all__ = [
    "Scenario",
    "PotentialOutcomes",
    "solve_intercept",
    "generate",
    "oracle_mu",
    "mu_functions",
    "true_theta",
    "population_truths",
    "MethodMetrics",
    "SimulationResult",
    "run_monte_carlo",
    "run_sigma_sweep",
    "DEFAULT_METHODS",
]

N_COVARIATES = 10
SCENARIO_BETAS = {
    1: (np.ones(5), np.ones(5)),
    2: (np.ones(5), np.array([-1.2, 1.0, -0.8, 0.5, -0.3])),
}
TARGET_CONTROL = 0.2
TARGET_TREATED = 0.4
DEFAULT_INTERCEPT_SEED = 0
DEFAULT_METHODS = ("naive", "oracle", "logit", "gnb", "knn", "forest")


def feature_index(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Nonlinear index beta . (3 x1^2, x2 x3, x3, x4, x5)."""
    Z = np.column_stack(
        [3.0 * X[:, 0] ** 2, X[:, 1] * X[:, 2], X[:, 2], X[:, 3], X[:, 4]]
    )
    return Z @ beta


def solve_intercept(beta, sigma_eps: float, target: float,
                    rng: np.random.Generator, pool: int = 1_000_000,
                    tol: float = 1e-3) -> float:
    """Bisect for c with P(index + c + noise > 0) = target.

    The probability is estimated on a fixed pool of (covariate, noise) draws
    shared across all bisection evaluations, so the estimated curve is
    monotone in c and bisection is valid. Raises SolverError when no bracket
    exists in [-50, 50].
    """
    if not 0 < target < 1:
        raise ParameterError(f"target must lie in (0, 1), got {target}")
    beta = np.asarray(beta, dtype=np.float64)
    X = rng.standard_normal((pool, N_COVARIATES))
    w = feature_index(X, beta) + sigma_eps * rng.standard_normal(pool)

    def g(c: float) -> float:
        return float(np.mean(w + c > 0))

    lo, hi = -50.0, 50.0
    if not (g(lo) <= target <= g(hi)):
        raise SolverError(f"no intercept bracket in [-50, 50] for target {target}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(g(mid) - target) < tol:
            return mid
        if g(mid) < target:
            lo = mid
        else:
            hi = mid
    raise SolverError("intercept bisection did not converge")


@dataclass(frozen=True)
class Scenario:
    """A data-generating configuration with solved intercepts."""

    scenario_id: int
    beta0: np.ndarray
    beta1: np.ndarray
    sigma_eps: float
    intercept0: float
    intercept1: float

    @classmethod
    def from_id(cls, scenario_id: int, sigma_eps: float,
                intercept_seed: int = DEFAULT_INTERCEPT_SEED,
                pool: int = 1_000_000) -> "Scenario":
        """Build a scenario; intercepts are calibrated on the noise-free index
        and therefore shared by every noise scale."""
        if scenario_id not in SCENARIO_BETAS:
            raise ParameterError(f"scenario must be 1 or 2, got {scenario_id}")
        if sigma_eps < 0:
            raise ParameterError("sigma_eps must be nonnegative")
        beta0, beta1 = SCENARIO_BETAS[scenario_id]
        ss = np.random.SeedSequence(intercept_seed)
        rng0, rng1 = [np.random.default_rng(s) for s in ss.spawn(2)]
        c0 = solve_intercept(beta0, 0.0, TARGET_CONTROL, rng0, pool=pool)
        c1 = solve_intercept(beta1, 0.0, TARGET_TREATED, rng1, pool=pool)
        return cls(scenario_id, beta0.copy(), beta1.copy(), float(sigma_eps), c0, c1)

    def with_sigma(self, sigma_eps: float) -> "Scenario":
        return dataclasses.replace(self, sigma_eps=float(sigma_eps))

    def index(self, X: np.ndarray, arm: int) -> np.ndarray:
        beta, c = ((self.beta0, self.intercept0), (self.beta1, self.intercept1))[arm]
        return feature_index(X, beta) + c


@dataclass(frozen=True)
class PotentialOutcomes:
    y0: np.ndarray
    y1: np.ndarray


def generate(scenario: Scenario, n: int, rng: np.random.Generator):
    """Draw a trial of size n: returns (Dataset, PotentialOutcomes).

    Each unit's two potential outcomes use independent noise draws; treatment
    is completely randomized with exactly floor(n/2) units treated.
    """
    if n < 2:
        raise ParameterError("n must be at least 2")
    X = rng.standard_normal((n, N_COVARIATES))
    eps = rng.standard_normal((n, 2))
    y = np.empty((n, 2), dtype=np.int64)
    for arm in (0, 1):
        idx = scenario.index(X, arm) + scenario.sigma_eps * eps[:, arm]
        y[:, arm] = np.where(idx > 0, 1, -1)
    arms = np.zeros(n, dtype=np.int64)
    arms[rng.permutation(n)[: n // 2]] = 1
    observed = np.where(arms == 1, y[:, 1], y[:, 0])
    return Dataset(observed, arms, X), PotentialOutcomes(y[:, 0], y[:, 1])


def oracle_mu(scenario: Scenario, arm: int, x) -> np.ndarray | float:
    """Exact P(Y(arm) = +1 | x) under the scenario."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    idx = scenario.index(X, arm)
    if scenario.sigma_eps == 0:
        p = np.where(idx > 0, 1.0, np.where(idx < 0, 0.0, 0.5))
    else:
        p = norm.cdf(idx / scenario.sigma_eps)
    return float(p[0]) if single else p


def mu_functions(scenario: Scenario):
    """Vectorized (mu0, mu1) callables for building oracle partitions."""
    return (
        lambda X: oracle_mu(scenario, 0, X),
        lambda X: oracle_mu(scenario, 1, X),
    )


def true_theta(scenario: Scenario, rng: np.random.Generator | None = None,
               draws: int = 10_000_000, batch: int = 1_000_000):
    """Monte-Carlo integral of mu0(X) (1 - mu1(X)): the true harm rate.

    Valid because the two potential outcomes use independent noise. Returns
    (estimate, standard_error).
    """
    rng = rng or np.random.default_rng()
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < draws:
        m = min(batch, draws - done)
        X = rng.standard_normal((m, N_COVARIATES))
        vals = oracle_mu(scenario, 0, X) * (1.0 - oracle_mu(scenario, 1, X))
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        done += m
    mean = total / draws
    var = max(total_sq / draws - mean**2, 0.0)
    return mean, float(np.sqrt(var / draws))


def population_truths(scenario: Scenario, draws: int = 1_000_000,
                      seed: int = 1234) -> dict:
    """Population quantities by Monte-Carlo integration.

    Returns theta, the arm-wise favorable rates, and the population bounds
    under the single-cell and the oracle four-cell partitions.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((draws, N_COVARIATES))
    mu0 = oracle_mu(scenario, 0, X)
    mu1 = oracle_mu(scenario, 1, X)
    theta = float(np.mean(mu0 * (1 - mu1)))
    m0, m1 = float(mu0.mean()), float(mu1.mean())
    naive = (max(0.0, m0 - m1), min(m0, 1.0 - m1))
    cand = np.column_stack([mu0, 1 - mu0, mu1, 1 - mu1])
    cell = np.argmax(cand, axis=1)
    lower = upper = 0.0
    for j in range(4):
        mask = cell == j
        rho = float(mask.mean())
        if rho == 0:
            continue
        c0, c1 = float(mu0[mask].mean()), float(mu1[mask].mean())
        lower += rho * max(0.0, c0 - c1)
        upper += rho * min(c0, 1.0 - c1)
    return {
        "theta": theta,
        "p_favorable_control": m0,
        "p_favorable_treated": m1,
        "naive": naive,
        "oracle": (lower, upper),
    }


# ---------------------------------------------------------------------------
# Monte-Carlo harness
# ---------------------------------------------------------------------------


@dataclass
class MethodMetrics:
    """Evaluation metrics for one estimator across the Monte-Carlo reps."""

    method: str
    theta: float
    reps: int
    failures: int
    flagged: bool
    part_lower: float
    part_upper: float
    part_bias: float
    part_width: float
    part_covr: float
    plug_lower: float | None = None
    plug_upper: float | None = None
    plug_bias: float | None = None
    plug_width: float | None = None
    plug_covr: float | None = None
    tmcr: float | None = None
    cmcr: float | None = None
    ci: dict = field(default_factory=dict)  # alpha -> coverage/mean-interval block

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["ci"] = {repr(a): block for a, block in self.ci.items()}
        return out


@dataclass
class SimulationResult:
    scenario_id: int
    sigma_eps: float
    n: int
    reps: int
    K: int
    alphas: tuple
    seed: int
    truths: dict
    rows: list[MethodMetrics]
    detail: dict = field(repr=False, default_factory=dict)

    def row(self, method: str) -> MethodMetrics:
        return next(r for r in self.rows if r.method == method)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "sigma_eps": self.sigma_eps,
            "n": self.n,
            "reps": self.reps,
            "k_folds": self.K,
            "alphas": list(self.alphas),
            "seed": self.seed,
            "truths": {
                k: (list(v) if isinstance(v, tuple) else v) for k, v in self.truths.items()
            },
            "methods": [r.to_json() for r in self.rows],
        }


def _resolve_method(name: str, specs: dict | None):
    if specs and name in specs:
        return specs[name]
    if name in ("naive", "oracle"):
        return name
    return ClassifierSpec(name)


def _rep_worker(task: tuple) -> dict:
    (scenario, n, method_items, K, alphas, with_ci, ci_draws, calibrate,
     with_mcr, mcr_folds, oracle_tie_seed, rep_seed) = task
    ss = np.random.SeedSequence(rep_seed)
    children = ss.spawn(1 + 2 * len(method_items))
    data_rng = np.random.default_rng(children[0])
    data, _ = generate(scenario, n, data_rng)
    out: dict = {}
    for i, (name, spec) in enumerate(method_items):
        rng = np.random.default_rng(children[1 + 2 * i])
        entry: dict = {}
        try:
            if name == "naive":
                result = estimate_fixed_partition(
                    data, naive_partition(), alphas, rng, ci_draws, with_ci
                )
            elif name == "oracle":
                fn0, fn1 = mu_functions(scenario)
                partition = oracle_partition(fn0, fn1, N_COVARIATES, oracle_tie_seed)
                result = estimate_fixed_partition(
                    data, partition, alphas, rng, ci_draws, with_ci
                )
            else:
                result = crossfit_estimate(
                    data, K, spec, calibrate=calibrate, alpha=alphas,
                    rng=rng, ci_draws=ci_draws, with_ci=with_ci,
                )
            entry["part"] = (result.bounds.lower, result.bounds.upper)
            entry["plugin"] = (
                (result.plugin.lower, result.plugin.upper) if result.plugin else None
            )
            entry["intervals"] = {
                a: (iv.ci_lower_bound, iv.ci_upper_bound, iv.extended)
                for a, iv in result.intervals.items()
            }
            entry["merges"] = sum(len(f.merges) for f in result.folds)
            if with_mcr and name not in ("naive", "oracle"):
                mcr_rngs = np.random.default_rng(children[2 + 2 * i]).spawn(2)
                entry["tmcr"] = cv_misclassification(
                    data.restrict(1), spec, mcr_folds, mcr_rngs[0]
                )
                entry["cmcr"] = cv_misclassification(
                    data.restrict(0), spec, mcr_folds, mcr_rngs[1]
                )
        except HarmboundsError as exc:
            entry = {"failed": f"{type(exc).__name__}: {exc}"}
        out[name] = entry
    return out


def run_monte_carlo(scenario: Scenario, n: int, methods=DEFAULT_METHODS,
                    reps: int = 200, K: int = 2, alpha=0.25, seed: int = 0,
                    with_ci: bool = True, ci_draws: int = 10_000,
                    calibrate: str = "none", with_mcr: bool = True,
                    mcr_folds: int = 5, mcr_reps: int | None = None,
                    threads: int = 1, truth_draws: int = 1_000_000,
                    specs: dict | None = None) -> SimulationResult:
    """Replicate the trial ``reps`` times and score each estimation method.

    Bias is the mean positive excursion of the interval estimate beyond the
    true harm rate, Width the mean interval width, CovR the fraction of reps
    whose interval covers the truth. Interval-estimator coverage of the true
    population bounds (naive and oracle methods) and extended-interval
    coverage of the harm rate are reported per alpha level. Deterministic
    given ``seed`` and independent of ``threads``.
    """
    if reps < 1:
        raise ParameterError("reps must be at least 1")
    alphas = (alpha,) if np.isscalar(alpha) else tuple(alpha)
    method_items = [(name, _resolve_method(name, specs)) for name in methods]
    master = np.random.SeedSequence(seed)
    setup = np.random.default_rng(master.spawn(1)[0])
    oracle_tie_seed = int(setup.integers(2**63))
    truth_seed = int(setup.integers(2**31))
    rep_seeds = [int(s.generate_state(1)[0]) for s in master.spawn(reps)]
    truths = population_truths(scenario, truth_draws, seed=truth_seed)

    tasks = []
    for r, rep_seed in enumerate(rep_seeds):
        rep_mcr = with_mcr and (mcr_reps is None or r < mcr_reps)
        tasks.append(
            (scenario, n, method_items, K, alphas, with_ci, ci_draws,
             calibrate, rep_mcr, mcr_folds, oracle_tie_seed, rep_seed)
        )
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_rep_worker, tasks, chunksize=max(1, reps // (threads * 4))))
    else:
        results = [_rep_worker(t) for t in tasks]

    theta = truths["theta"]
    rows = []
    detail: dict = {}
    for name, _ in method_items:
        entries = [r[name] for r in results]
        ok = [e for e in entries if "failed" not in e]
        failures = len(entries) - len(ok)
        if not ok:
            warnings.warn(f"method {name!r} failed in every rep")
            continue
        pl = np.array([e["part"][0] for e in ok])
        pu = np.array([e["part"][1] for e in ok])
        row = MethodMetrics(
            method=name,
            theta=theta,
            reps=len(ok),
            failures=failures,
            flagged=failures > 0.01 * reps,
            part_lower=float(pl.mean()),
            part_upper=float(pu.mean()),
            part_bias=float(np.mean(np.maximum.reduce([pl - theta, theta - pu, np.zeros_like(pl)]))),
            part_width=float(np.mean(pu - pl)),
            part_covr=float(np.mean((pl <= theta) & (theta <= pu))),
        )
        method_detail = {"part_lower": pl, "part_upper": pu}
        if ok[0]["plugin"] is not None:
            gl = np.array([e["plugin"][0] for e in ok])
            gu = np.array([e["plugin"][1] for e in ok])
            row.plug_lower = float(gl.mean())
            row.plug_upper = float(gu.mean())
            row.plug_bias = float(np.mean(np.maximum.reduce([gl - theta, theta - gu, np.zeros_like(gl)])))
            row.plug_width = float(np.mean(gu - gl))
            row.plug_covr = float(np.mean((gl <= theta) & (theta <= gu)))
            method_detail.update(plug_lower=gl, plug_upper=gu)
        true_bounds = truths.get(name) if name in ("naive", "oracle") else None
        if with_ci:
            for a in alphas:
                ci_L = np.array([e["intervals"][a][0] for e in ok])
                ci_U = np.array([e["intervals"][a][1] for e in ok])
                ext = np.array([e["intervals"][a][2] for e in ok])
                block = {
                    "mean_ci_lower": [float(ci_L[:, 0].mean()), float(ci_L[:, 1].mean())],
                    "mean_ci_upper": [float(ci_U[:, 0].mean()), float(ci_U[:, 1].mean())],
                    "mean_extended": [float(ext[:, 0].mean()), float(ext[:, 1].mean())],
                    "ext_covr": float(np.mean((ext[:, 0] <= theta) & (theta <= ext[:, 1]))),
                    "lcovr": None,
                    "ucovr": None,
                }
                if true_bounds is not None:
                    Lt, Ut = true_bounds
                    block["lcovr"] = float(np.mean((ci_L[:, 0] <= Lt) & (Lt <= ci_L[:, 1])))
                    block["ucovr"] = float(np.mean((ci_U[:, 0] <= Ut) & (Ut <= ci_U[:, 1])))
                row.ci[a] = block
                method_detail[f"ci_{a}"] = {"ci_L": ci_L, "ci_U": ci_U, "ext": ext}
        mcrs_t = [e["tmcr"] for e in ok if "tmcr" in e]
        mcrs_c = [e["cmcr"] for e in ok if "cmcr" in e]
        if mcrs_t:
            row.tmcr = float(np.mean(mcrs_t))
            row.cmcr = float(np.mean(mcrs_c))
        rows.append(row)
        detail[name] = method_detail

    return SimulationResult(
        scenario_id=scenario.scenario_id,
        sigma_eps=scenario.sigma_eps,
        n=n,
        reps=reps,
        K=K,
        alphas=alphas,
        seed=seed,
        truths=truths,
        rows=rows,
        detail=detail,
    )


def run_sigma_sweep(scenario_id: int, sigmas, n: int, methods=("naive", "oracle", "forest"),
                    reps: int = 100, K: int = 2, alpha: float = 0.25, seed: int = 0,
                    threads: int = 1, intercept_seed: int = DEFAULT_INTERCEPT_SEED,
                    **kwargs) -> list[SimulationResult]:
    """Rerun the Monte-Carlo study over a grid of noise scales.

    The scenario intercepts are solved once and shared across the grid, so
    the sweep isolates the effect of the noise scale on the bounds.
    """
    base = Scenario.from_id(scenario_id, float(sigmas[0]), intercept_seed)
    out = []
    for i, sigma in enumerate(sigmas):
        scenario = base.with_sigma(float(sigma))
        out.append(
            run_monte_carlo(
                scenario, n, methods=methods, reps=reps, K=K, alpha=alpha,
                seed=seed + i, threads=threads, **kwargs
            )
        )
    return out
