import itertools

import numpy as np
import pytest

from harmbounds.classifiers import ConstantModel, FixedFunctionModel
from harmbounds.errors import ParameterError
from harmbounds.partitioning import (
    AT_PAIRS,
    CellLabel,
    naive_partition,
    oracle_partition,
    plug_in_partition,
    two_cell_partitions,
    weighted_bayes_risk,
)
from harmbounds.simulation import mu_functions


def lookup_model(points, values):
    """Probability model defined on a finite covariate grid by row lookup."""
    points = np.asarray(points, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)

    def fn(X):
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            j = np.flatnonzero((points == row).all(axis=1))[0]
            out[i] = values[j]
        return out

    return FixedFunctionModel(fn, points.shape[1])


def population_bounds(rho, mu0, mu1, groups):
    """Exact population bounds under any grouping of a finite covariate space."""
    rho, mu0, mu1 = map(np.asarray, (rho, mu0, mu1))
    lower = upper = 0.0
    for g in np.unique(groups):
        mask = groups == g
        w = rho[mask].sum()
        m0 = float((rho[mask] * mu0[mask]).sum() / w)
        m1 = float((rho[mask] * mu1[mask]).sum() / w)
        lower += w * max(0.0, m0 - m1)
        upper += w * min(m0, 1.0 - m1)
    return lower, upper


class TestNaivePartition:
    def test_everything_in_one_cell(self, rng):
        part = naive_partition()
        X = rng.standard_normal((50, 3))
        assert part.J == 1
        assert np.all(part.assign(X) == 0)
        assert part.rule(X[0]) == CellLabel("whole")


class TestPlugInPartition:
    def test_direct_argmax(self):
        m0 = ConstantModel(0.9, 2)
        m1 = ConstantModel(0.8, 2)
        part = plug_in_partition(m0, m1, tie_seed=1)
        label = part.rule(np.array([0.3, -0.2]))
        assert (label.arm, label.sign) == (0, 1)

    def test_two_way_tie_resolved_by_seed(self, rng):
        m0 = ConstantModel(1.0, 2)
        m1 = ConstantModel(1.0, 2)
        part = plug_in_partition(m0, m1, tie_seed=5)
        X = rng.standard_normal((300, 2))
        labels = [part.cells[j] for j in part.assign(X)]
        assert {(c.arm, c.sign) for c in labels} <= {(0, 1), (1, 1)}
        # the rule is a fixed function: re-evaluation matches
        np.testing.assert_array_equal(part.assign(X), part.assign(X))

    def test_four_way_tie_uniform_over_pairs(self, rng):
        m0 = ConstantModel(0.5, 2)
        m1 = ConstantModel(0.5, 2)
        part = plug_in_partition(m0, m1, tie_seed=11)
        X = rng.standard_normal((4000, 2))
        counts = np.bincount(part.assign(X), minlength=4)
        assert counts.sum() == 4000
        np.testing.assert_allclose(counts / 4000, 0.25, atol=0.05)

    def test_different_seeds_give_different_tie_breaks(self, rng):
        m0 = ConstantModel(0.5, 2)
        m1 = ConstantModel(0.5, 2)
        X = rng.standard_normal((200, 2))
        a = plug_in_partition(m0, m1, tie_seed=0).assign(X)
        b = plug_in_partition(m0, m1, tie_seed=1).assign(X)
        assert (a != b).any()

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            plug_in_partition(ConstantModel(0.5, 2), ConstantModel(0.5, 3))


class TestTwoCellPartitions:
    def test_constant_models_single_lower_cell(self, rng):
        lower, _ = two_cell_partitions(ConstantModel(0.2, 1), ConstantModel(0.4, 1))
        X = rng.standard_normal((40, 1))
        assert np.all(lower.assign(X) == 0)  # mu0 <= mu1 everywhere

    def test_boundary_goes_to_positive_side(self, rng):
        m0 = FixedFunctionModel(lambda X: np.clip(X[:, 0], 0, 1), 1)
        m1 = FixedFunctionModel(lambda X: np.clip(1 - X[:, 0], 0, 1), 1)
        _, upper = two_cell_partitions(m0, m1)
        X = rng.random((40, 1))
        assert np.all(upper.assign(X) == 0)  # mu0 + mu1 = 1 everywhere

    def test_intersections_reproduce_four_cell_rule(self, rng):
        def f0(X):
            return 1 / (1 + np.exp(-(X[:, 0] - 0.3 * X[:, 1])))

        def f1(X):
            return 1 / (1 + np.exp(-(0.5 * X[:, 0] + X[:, 1] - 0.2)))

        m0 = FixedFunctionModel(f0, 2)
        m1 = FixedFunctionModel(f1, 2)
        X = rng.standard_normal((500, 2))
        lower, upper = two_cell_partitions(m0, m1)
        plug = plug_in_partition(m0, m1, tie_seed=3)
        pair_key = lower.assign(X) * 2 + upper.assign(X)
        at_key = plug.assign(X)
        # the two labelings induce the same grouping of the sample
        for key in np.unique(pair_key):
            block = at_key[pair_key == key]
            assert len(np.unique(block)) == 1
        for key in np.unique(at_key):
            block = pair_key[at_key == key]
            assert len(np.unique(block)) == 1


class TestOraclePartition:
    def test_homogeneous_scenario_mu0_below_mu1(self, scenario1, rng):
        fn0, fn1 = mu_functions(scenario1)
        X = rng.standard_normal((300, 10))
        p0, p1 = fn0(X), fn1(X)
        # strictly below except where both saturate to 1.0 in floating point
        assert np.all(p0 <= p1)
        unsaturated = p1 < 1.0
        assert np.all(p0[unsaturated] < p1[unsaturated])
        m0 = FixedFunctionModel(fn0, 10)
        m1 = FixedFunctionModel(fn1, 10)
        lower, _ = two_cell_partitions(m0, m1)
        assert np.all(lower.assign(X) == 0)  # the mu0 > mu1 side is empty
        # where no floating-point saturation tie occurs, only the (1,1) and
        # (0,-1) cells are populated
        cand = np.column_stack([p0, 1 - p0, p1, 1 - p1])
        top2 = np.sort(cand, axis=1)[:, -2:]
        untied = top2[:, 0] < top2[:, 1]
        part = oracle_partition(fn0, fn1, 10, tie_seed=4)
        assigned = part.assign(X[untied])
        populated = {(part.cells[j].arm, part.cells[j].sign) for j in assigned}
        assert populated <= {(1, 1), (0, -1)}

    def test_constant_mu_populates_only_tied_cells(self, rng):
        part = oracle_partition(
            lambda X: np.full(X.shape[0], 0.3), lambda X: np.full(X.shape[0], 0.3),
            2, tie_seed=9,
        )
        X = rng.standard_normal((200, 2))
        populated = {(part.cells[j].arm, part.cells[j].sign) for j in part.assign(X)}
        assert populated <= {(0, -1), (1, -1)}

    def test_matches_plug_in_on_wrapped_models(self, scenario2, rng):
        fn0, fn1 = mu_functions(scenario2)
        X = rng.standard_normal((200, 10))
        a = oracle_partition(fn0, fn1, 10, tie_seed=7).assign(X)
        b = plug_in_partition(
            FixedFunctionModel(fn0, 10), FixedFunctionModel(fn1, 10), tie_seed=7
        ).assign(X)
        np.testing.assert_array_equal(a, b)


class TestWeightedBayesRisk:
    def test_constant_rule_risk(self, rng):
        n = 4000
        y0 = np.where(rng.random(n) < 0.3, 1, -1)
        y1 = np.where(rng.random(n) < 0.6, 1, -1)
        g = np.tile([1, 1], (n, 1))  # always predict (arm=1, sign=+1)
        risk = weighted_bayes_risk(g, y0, y1)
        # misclassifies every arm-0 row plus the arm-1 rows with Y(1) = -1
        expected = 1.0 + np.mean(y1 != 1)
        assert risk == pytest.approx(expected, abs=1e-12)

    def test_permutation_invariance(self, rng):
        n = 500
        y0 = np.where(rng.random(n) < 0.3, 1, -1)
        y1 = np.where(rng.random(n) < 0.6, 1, -1)
        g = np.column_stack([rng.integers(0, 2, n), rng.choice([-1, 1], n)])
        perm = rng.permutation(n)
        assert weighted_bayes_risk(g, y0, y1) == pytest.approx(
            weighted_bayes_risk(g[perm], y0[perm], y1[perm])
        )

    def test_optimal_rule_beats_all_rivals_on_three_point_toy(self):
        # exact population risk via an expanded sample with rational weights
        mu0 = np.array([0.9, 0.4, 0.2])
        mu1 = np.array([0.6, 0.5, 0.1])
        n_x = np.array([200, 200, 100])  # point masses 0.4, 0.4, 0.2
        rows_x, rows_y0, rows_y1 = [], [], []
        for j in range(3):
            k0 = int(round(mu0[j] * n_x[j]))
            k1 = int(round(mu1[j] * n_x[j]))
            rows_x.append(np.full(n_x[j], float(j)))
            rows_y0.append(np.concatenate([np.ones(k0), -np.ones(n_x[j] - k0)]))
            rows_y1.append(np.concatenate([np.ones(k1), -np.ones(n_x[j] - k1)]))
        x = np.concatenate(rows_x).astype(int)
        y0 = np.concatenate(rows_y0).astype(int)
        y1 = np.concatenate(rows_y1).astype(int)

        def risk_of(rule):
            g = np.array([rule[j] for j in x])
            return weighted_bayes_risk(g, y0, y1)

        # four-cell decision from the true probabilities
        best_rule = []
        for j in range(3):
            cand = [(mu0[j], (0, 1)), (1 - mu0[j], (0, -1)),
                    (mu1[j], (1, 1)), (1 - mu1[j], (1, -1))]
            best_rule.append(max(cand)[1])
        optimal = risk_of(best_rule)
        for rival in itertools.product(AT_PAIRS, repeat=3):
            assert optimal <= risk_of(list(rival)) + 1e-12


class TestPopulationProperties:
    def test_finer_partitions_nest_bounds(self, rng):
        # 200 random nested pairs on a discrete covariate space, computed exactly
        for _ in range(200):
            K = int(rng.integers(4, 12))
            rho = rng.dirichlet(np.ones(K))
            mu0 = rng.random(K)
            mu1 = rng.random(K)
            coarse = rng.integers(0, 3, K)
            fine = coarse * 4 + rng.integers(0, 4, K)  # refinement of coarse
            L_c, U_c = population_bounds(rho, mu0, mu1, coarse)
            L_f, U_f = population_bounds(rho, mu0, mu1, fine)
            assert L_f >= L_c - 1e-12
            assert U_f <= U_c + 1e-12

    def test_four_cell_partition_attains_pointwise_bounds(self, rng):
        # the (arm, sign) rule built from the true mu recovers the bounds
        # computed pointwise over the covariate distribution
        for _ in range(50):
            K = int(rng.integers(3, 10))
            rho = rng.dirichlet(np.ones(K))
            mu0 = rng.random(K)
            mu1 = rng.random(K)
            cand = np.column_stack([mu0, 1 - mu0, mu1, 1 - mu1])
            groups = np.argmax(cand, axis=1)
            L, U = population_bounds(rho, mu0, mu1, groups)
            L_point = float((rho * np.maximum(0, mu0 - mu1)).sum())
            U_point = float((rho * np.minimum(mu0, 1 - mu1)).sum())
            assert L == pytest.approx(L_point, abs=1e-12)
            assert U == pytest.approx(U_point, abs=1e-12)

    def test_plug_in_information_lower_bound(self, rng):
        # four-cell rule from perturbed probabilities cannot lose more
        # information than the mean perturbation allows
        for _ in range(50):
            K = int(rng.integers(3, 10))
            rho = rng.dirichlet(np.ones(K))
            mu0 = rng.random(K)
            mu1 = rng.random(K)
            mu0_hat = np.clip(mu0 + rng.normal(0, 0.15, K), 0, 1)
            mu1_hat = np.clip(mu1 + rng.normal(0, 0.15, K), 0, 1)
            cand_hat = np.column_stack([mu0_hat, 1 - mu0_hat, mu1_hat, 1 - mu1_hat])
            groups = np.argmax(cand_hat, axis=1)
            L_plug, U_plug = population_bounds(rho, mu0, mu1, groups)
            info_plug = 1 + L_plug - U_plug
            mu_max = np.column_stack([mu0, 1 - mu0, mu1, 1 - mu1]).max(axis=1)
            mu_max_hat = cand_hat.max(axis=1)
            err = np.maximum(np.abs(mu0_hat - mu0), np.abs(mu1_hat - mu1))
            penalty = float((rho * (mu_max - mu_max_hat + err)).sum())
            L_inf = float((rho * np.maximum(0, mu0 - mu1)).sum())
            U_inf = float((rho * np.minimum(mu0, 1 - mu1)).sum())
            info_best = 1 + L_inf - U_inf
            assert info_plug >= info_best - penalty - 1e-12

    def test_lookup_partition_has_at_most_four_cells(self, rng):
        points = rng.standard_normal((30, 2))
        m0 = lookup_model(points, rng.random(30))
        m1 = lookup_model(points, rng.random(30))
        part = plug_in_partition(m0, m1, tie_seed=2)
        assert len(np.unique(part.assign(points))) <= 4
        lower, upper = two_cell_partitions(m0, m1)
        assert len(np.unique(lower.assign(points))) <= 2
        assert len(np.unique(upper.assign(points))) <= 2
