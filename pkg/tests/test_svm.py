import numpy as np
import pytest

from cardiotox.errors import InvalidInputError
from cardiotox.learners import (
    KernelSpec,
    SvmModel,
    kernel_eval,
    svm_decision,
    svm_decision_many,
    svm_fit,
    svm_predict,
)


def separable_problem(rng, n=200, gap=2.0):
    half = n // 2
    x = np.vstack(
        [
            rng.normal(size=(half, 2)) + [gap, gap],
            rng.normal(size=(n - half, 2)) - [gap, gap],
        ]
    )
    y = np.array([1.0] * half + [-1.0] * (n - half))
    return x, y


class TestKernelEval:
    def test_rbf_self_similarity(self, rng):
        spec = KernelSpec("rbf", gamma=0.7)
        for _ in range(5):
            x = rng.normal(size=4)
            assert kernel_eval(spec, x, x) == pytest.approx(1.0)

    def test_linear_dot_product(self):
        assert kernel_eval(KernelSpec("linear"), np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0

    def test_poly_hand_case(self):
        spec = KernelSpec("poly", degree=2, gamma=1.0, coef0=1.0)
        assert kernel_eval(spec, np.array([1.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(4.0)

    def test_sigmoid_tanh(self):
        spec = KernelSpec("sigmoid", gamma=0.5, coef0=0.25)
        x = np.array([1.0, 1.0])
        assert kernel_eval(spec, x, x) == pytest.approx(np.tanh(0.5 * 2 + 0.25))

    def test_gamma_defaults_to_inverse_dim(self):
        x = np.array([1.0, 1.0, 1.0, 1.0])
        z = np.zeros(4)
        assert kernel_eval(KernelSpec("rbf"), x, z) == pytest.approx(np.exp(-1.0))

    def test_nonpositive_gamma_rejected(self):
        with pytest.raises(InvalidInputError):
            KernelSpec("rbf", gamma=0.0)
        with pytest.raises(InvalidInputError):
            KernelSpec("rbf", gamma=-1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            kernel_eval(KernelSpec("linear"), np.array([1.0]), np.array([1.0, 2.0]))


class TestSvmFit:
    def test_symmetric_1d_boundary_and_margin(self):
        x = np.array([[-1.0], [1.0]])
        y = np.array([-1.0, 1.0])
        model = svm_fit(x, y, KernelSpec("linear"), C=100.0)
        assert model.converged
        assert abs(svm_decision(model, np.array([0.0]))) <= 1e-3
        assert svm_decision(model, np.array([1.0])) == pytest.approx(1.0, abs=1e-3)
        assert svm_decision(model, np.array([-1.0])) == pytest.approx(-1.0, abs=1e-3)

    def test_xor_with_rbf(self):
        x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([-1.0, 1.0, 1.0, -1.0])
        model = svm_fit(x, y, KernelSpec("rbf", gamma=1.0), C=10.0)
        preds = [svm_predict(model, row) for row in x]
        assert preds == list(y.astype(int))

    def test_dual_constraints(self, rng):
        x, y = separable_problem(rng)
        model = svm_fit(x, y, KernelSpec("rbf", gamma=0.5), C=5.0)
        assert model.alphas is not None
        assert np.all(model.alphas >= -1e-12)
        assert np.all(model.alphas <= 5.0 + 1e-12)
        assert abs(float(model.alphas @ y)) <= 1e-6

    def test_kkt_conditions_at_convergence(self, rng):
        tol = 1e-3
        x, y = separable_problem(rng)
        model = svm_fit(x, y, KernelSpec("rbf", gamma=0.5), C=2.0, tol=tol)
        assert model.converged
        f = svm_decision_many(model, x)
        margins = y * f
        for a, m in zip(model.alphas, margins):
            if a < 1e-8:
                assert m >= 1.0 - tol - 1e-9
            elif a > 2.0 - 1e-8:
                assert m <= 1.0 + tol + 1e-9
            else:
                assert abs(m - 1.0) <= tol + 1e-9

    def test_support_vectors_only_nonzero_alphas(self, rng):
        x, y = separable_problem(rng, n=80)
        model = svm_fit(x, y, KernelSpec("linear"), C=1.0)
        assert model.support_vectors.shape[0] == int(np.sum(model.alphas > 1e-8))
        assert model.support_vectors.shape[0] == model.dual_coefs.shape[0]

    def test_single_class_rejected(self, rng):
        x = rng.normal(size=(10, 2))
        with pytest.raises(InvalidInputError):
            svm_fit(x, np.ones(10), KernelSpec("linear"), C=1.0)

    def test_labels_must_be_pm1(self, rng):
        x = rng.normal(size=(4, 2))
        with pytest.raises(InvalidInputError):
            svm_fit(x, np.array([0.0, 1.0, 0.0, 1.0]), KernelSpec("linear"), C=1.0)

    def test_nonpositive_c_rejected(self, rng):
        x = rng.normal(size=(4, 2))
        y = np.array([-1.0, 1.0, -1.0, 1.0])
        with pytest.raises(InvalidInputError):
            svm_fit(x, y, KernelSpec("linear"), C=0.0)

    def test_max_passes_flags_nonconvergence(self, rng):
        x, y = separable_problem(rng, n=100, gap=0.3)
        model = svm_fit(x, y, KernelSpec("rbf", gamma=2.0), C=10.0, max_passes=1)
        assert not model.converged

    def test_conflicting_duplicate_points_keep_dual_constraint(self):
        # identical rows with opposite labels create eta = 0 working pairs
        x = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
        y = np.array([1.0, -1.0, 1.0, -1.0, 1.0])
        model = svm_fit(x, y, KernelSpec("rbf", gamma=1.0), C=1.0)
        assert abs(float(model.alphas @ y)) <= 1e-6
        assert np.all(model.alphas >= -1e-12) and np.all(model.alphas <= 1.0 + 1e-12)

    def test_sigmoid_kernel_trains(self, rng):
        x, y = separable_problem(rng, n=60)
        model = svm_fit(x, y, KernelSpec("sigmoid", gamma=0.1, coef0=0.0), C=1.0)
        preds = np.sign(svm_decision_many(model, x))
        assert np.mean(preds == y) > 0.9

    def test_poly_kernel_trains(self, rng):
        x, y = separable_problem(rng, n=60)
        model = svm_fit(x, y, KernelSpec("poly", degree=2), C=1.0)
        preds = np.where(svm_decision_many(model, x) >= 0, 1.0, -1.0)
        assert np.mean(preds == y) > 0.9


class TestSvmDecision:
    def test_hand_built_three_vector_model(self):
        spec = KernelSpec("linear", gamma=1.0, coef0=0.0)
        sv = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
        dual = np.array([0.5, -0.25, 0.75])
        model = SvmModel(spec, C=1.0, support_vectors=sv, dual_coefs=dual, bias=0.125)
        row = np.array([2.0, 3.0])
        expected = 0.5 * (2.0) - 0.25 * (3.0) + 0.75 * (-5.0) + 0.125
        assert svm_decision(model, row) == pytest.approx(expected, abs=1e-12)

    def test_zero_decision_predicts_positive(self):
        spec = KernelSpec("linear", gamma=1.0, coef0=0.0)
        model = SvmModel(spec, 1.0, np.empty((0, 2)), np.empty(0), bias=0.0)
        assert svm_predict(model, np.array([1.0, 1.0])) == 1

    def test_decision_many_matches_single(self, rng):
        x, y = separable_problem(rng, n=40)
        model = svm_fit(x, y, KernelSpec("rbf", gamma=0.3), C=1.0)
        probe = rng.normal(size=(10, 2))
        batch = svm_decision_many(model, probe)
        for row, expected in zip(probe, batch):
            assert svm_decision(model, row) == pytest.approx(expected, rel=1e-12)
