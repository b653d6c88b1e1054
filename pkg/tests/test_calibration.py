import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from harmbounds.calibration import (
    SigmoidCalibrator,
    calibrate_cv,
    isotonic_regression,
    pav_fit,
    platt_fit,
)
from harmbounds.classifiers import (
    ConstantModel,
    FixedFunctionModel,
    logistic_objective_grad,
)
from harmbounds.dataset import Dataset
from harmbounds.errors import DegeneracyError, ParameterError


def brute_force_isotonic(y):
    """Independent oracle: enumerate every contiguous block partition whose
    block means are nondecreasing and return the SSE-minimizing fit."""
    n = len(y)
    y = np.asarray(y, dtype=np.float64)
    best_sse, best_fit = np.inf, None
    for mask in range(2 ** (n - 1)):
        cuts = [i + 1 for i in range(n - 1) if mask >> i & 1]
        blocks = np.split(y, cuts)
        means = [b.mean() for b in blocks]
        if any(means[i] > means[i + 1] for i in range(len(means) - 1)):
            continue
        fit = np.concatenate([np.full(len(b), m) for b, m in zip(blocks, means)])
        sse = float(((y - fit) ** 2).sum())
        if sse < best_sse - 1e-15:
            best_sse, best_fit = sse, fit
    return best_fit


class TestPav:
    def test_monotone_labels_are_fixed_point(self):
        scores = np.array([0.1, 0.2, 0.5, 0.9])
        labels = np.array([0, 0, 1, 1])
        cal = pav_fit(scores, labels)
        np.testing.assert_array_equal(cal(scores), labels)

    def test_two_point_violation_pools_to_half(self):
        cal = pav_fit(np.array([0.2, 0.7]), np.array([1, 0]))
        np.testing.assert_allclose(cal(np.array([0.2, 0.7])), [0.5, 0.5])

    def test_five_point_known_solution(self):
        scores = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
        labels = np.array([0, 1, 0, 1, 1])
        cal = pav_fit(scores, labels)
        np.testing.assert_allclose(cal(scores), [0.0, 0.5, 0.5, 1.0, 1.0])

    def test_all_64_patterns_match_brute_force_oracle(self, rng):
        scores = np.sort(rng.standard_normal(6))
        for bits in itertools.product([0, 1], repeat=6):
            labels = np.array(bits)
            fitted = pav_fit(scores, labels)(scores)
            oracle = brute_force_isotonic(labels)
            np.testing.assert_allclose(fitted, oracle, atol=1e-10)
            assert np.all(np.diff(fitted) >= 0)
            assert fitted.mean() == pytest.approx(labels.mean(), abs=1e-12)

    def test_equal_scores_pooled(self):
        cal = pav_fit(np.array([0.5, 0.5, 0.8]), np.array([0, 1, 1]))
        assert cal(np.array([0.5]))[0] == pytest.approx(0.5)
        assert len(cal.breakpoints) == 2

    def test_out_of_range_queries_clamp(self):
        cal = pav_fit(np.array([0.2, 0.8]), np.array([0, 1]))
        assert cal(np.array([-5.0]))[0] == 0.0
        assert cal(np.array([5.0]))[0] == 1.0

    def test_empty_input_rejected(self):
        with pytest.raises(ParameterError):
            pav_fit(np.array([]), np.array([]))

    @given(
        n=st.integers(2, 30),
        seed=st.integers(0, 2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_properties_hold_on_random_inputs(self, n, seed):
        r = np.random.default_rng(seed)
        scores = r.standard_normal(n)
        labels = (r.random(n) < 0.5).astype(int)
        cal = pav_fit(scores, labels)
        fitted = cal(scores)
        # monotone in [0,1], ranking preserved, sample mean preserved
        assert np.all(np.diff(cal.values) >= 0)
        assert fitted.min() >= 0.0 and fitted.max() <= 1.0
        order = np.argsort(scores)
        assert np.all(np.diff(fitted[order]) >= -1e-15)
        assert fitted.mean() == pytest.approx(labels.mean(), abs=1e-12)

    def test_idempotence_of_isotonic_pass(self, rng):
        y = rng.random(25)
        once = isotonic_regression(y)
        twice = isotonic_regression(once)
        np.testing.assert_allclose(twice, once, atol=1e-14)


class TestPlatt:
    def test_constant_scores_return_label_mean(self):
        scores = np.full(50, 0.7)
        labels = np.array([1] * 15 + [0] * 35)
        cal = platt_fit(scores, labels)
        assert cal(np.array([0.7]))[0] == pytest.approx(0.3, abs=1e-4)

    def test_symmetric_scores_zero_offset(self):
        scores = np.array([1.5, -1.5] * 20)
        labels = np.array([1, 0] * 20)
        cal = platt_fit(scores, labels)
        assert abs(cal.offset) < 1e-4

    def test_matches_independent_optimizer(self, rng):
        scores = rng.standard_normal(120)
        labels = (rng.random(120) < 1 / (1 + np.exp(-2 * scores))).astype(int)
        cal = platt_fit(scores, labels)
        design = np.column_stack([np.ones_like(scores), scores])
        pm = 2.0 * labels - 1.0
        res = optimize.minimize(
            lambda b: logistic_objective_grad(design, pm, 1e-6, b),
            np.zeros(2),
            jac=True,
            method="BFGS",
            options={"gtol": 1e-12, "maxiter": 500},
        )
        np.testing.assert_allclose([cal.offset, cal.slope], res.x, atol=1e-6)

    def test_single_class_rejected(self):
        with pytest.raises(DegeneracyError):
            platt_fit(np.array([0.1, 0.9]), np.array([1, 1]))

    def test_preserves_ranking(self, rng):
        cal = SigmoidCalibrator(slope=2.5, offset=-1.0)
        s = np.sort(rng.standard_normal(100))
        assert np.all(np.diff(cal(s)) > 0)


class TestCalibrateCv:
    def test_constant_overconfident_model_corrected(self, rng):
        n = 400
        x = rng.standard_normal((n, 2))
        y = np.where(np.arange(n) % 2 == 0, 1, -1)
        fitter = lambda X, labels, r: ConstantModel(0.9, X.shape[1])
        model = calibrate_cv(x, fitter, method="isotonic", n_folds=2, rng=rng, labels=y)
        p = model.predict_proba(rng.standard_normal((100, 2)))
        np.testing.assert_allclose(p, 0.5, atol=0.05)

    def test_well_calibrated_model_left_alone(self, rng):
        n = 2000
        x = rng.standard_normal((n, 1))
        truth = 1 / (1 + np.exp(-1.5 * x[:, 0]))
        y = np.where(rng.random(n) < truth, 1, -1)
        base = lambda X, labels, r: FixedFunctionModel(
            lambda q: 1 / (1 + np.exp(-1.5 * q[:, 0])), 1
        )
        model = calibrate_cv(x, base, method="isotonic", n_folds=2, rng=rng, labels=y)
        fresh = rng.standard_normal((1500, 1))
        base_p = 1 / (1 + np.exp(-1.5 * fresh[:, 0]))
        assert np.mean(np.abs(model.predict_proba(fresh) - base_p)) < 0.05

    def test_platt_route_and_dataset_input(self, rng):
        n = 300
        x = rng.standard_normal((n, 2))
        p = 1 / (1 + np.exp(-x[:, 0]))
        y = np.where(rng.random(n) < p, 1, -1)
        data = Dataset(y, np.tile([0, 1], n // 2), x)
        model = calibrate_cv(data, "logit", method="platt", n_folds=2, rng=rng)
        out = model.predict_proba(x)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert model.kind == "calibrated-logit"

    def test_too_few_samples_rejected(self, rng):
        with pytest.raises(ParameterError):
            calibrate_cv(
                np.zeros((3, 1)), "logit", method="platt", n_folds=2, rng=rng,
                labels=np.array([1, -1, 1]),
            )

    def test_decile_calibration_error_small(self):
        # calibrated predictions should match conditional frequencies:
        # decile-bin mean prediction vs bin label frequency within 0.05
        rng = np.random.default_rng(99)
        n = 5000
        x = rng.standard_normal((n, 3))
        truth = 1 / (1 + np.exp(-(1.2 * x[:, 0] - 0.8 * x[:, 1])))
        y = np.where(rng.random(n) < truth, 1, -1)
        model = calibrate_cv(
            x, {"kind": "forest", "params": {"n_trees": 80}},
            method="isotonic", n_folds=2, rng=rng, labels=y,
        )
        m = 20000
        fresh = rng.standard_normal((m, 3))
        truth_fresh = 1 / (1 + np.exp(-(1.2 * fresh[:, 0] - 0.8 * fresh[:, 1])))
        z = (rng.random(m) < truth_fresh).astype(float)
        p = model.predict_proba(fresh)
        edges = np.quantile(p, np.linspace(0, 1, 11))
        which = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, 9)
        for b in range(10):
            mask = which == b
            if mask.sum() < 200:
                continue
            assert abs(p[mask].mean() - z[mask].mean()) < 0.05
