import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from degradenet.baselines import (
    DesignSpec, RegressionModel, build_design, fit_baseline, fit_ridge, penalized_objective,
    predict_baseline, predict_regression,
)
from degradenet.dataset import normalize, split
from degradenet.errors import InvalidInputError, ShapeError, SingularSystemError
from degradenet.numerics import make_rng

M = 5  # static width used in the design-length checks


@pytest.mark.parametrize("multi,features,length", [
    (False, False, 7), (True, False, 14), (True, True, 14 + M), (False, True, 7 + M)])
def test_design_lengths(multi, features, length):
    inputs = np.arange(14.0).reshape(7, 2)
    row = build_design(inputs, np.ones(M), DesignSpec(multi, features))
    assert row.shape == (length,)


def test_design_layout():
    inputs = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
    row = build_design(inputs, np.array([7.0]), DesignSpec(True, True))
    assert_allclose(row, [1, 2, 3, 10, 20, 30, 7])
    assert_allclose(build_design(inputs, np.zeros(1), DesignSpec(False, False), "cog"), [10, 20, 30])


def test_design_shape_errors():
    with pytest.raises(ShapeError):
        build_design(np.ones((7, 3)), np.ones(M), DesignSpec())
    with pytest.raises(ShapeError):
        build_design(np.ones((2, 7, 2)), np.ones((3, M)), DesignSpec())


def test_exact_line_recovery():
    x = np.array([0.0, 1.0, 2.0, 5.0])
    m = fit_ridge(x, 2 * x + 1, lam=0.0)
    assert_allclose(m.coefficients, [[2.0]], atol=1e-9)
    assert_allclose(m.intercept, [1.0], atol=1e-9)
    assert_allclose(predict_regression(m, [3.0]), [7.0], atol=1e-9)


def test_huge_lambda_shrinks_to_mean():
    r = make_rng(0)
    X, y = r.normal(size=(30, 3)), r.normal(size=30)
    m = fit_ridge(X, y, lam=1e12)
    assert np.abs(m.coefficients).max() < 1e-9
    assert_allclose(m.intercept, [y.mean()], atol=1e-9)


def test_three_point_toy_matches_inverse_oracle():
    X = np.array([[1.0, 2.0], [2.0, 0.5], [4.0, 1.0]])
    y = np.array([1.0, 3.0, 2.0])
    m = fit_ridge(X, y, lam=1.0)
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    beta = np.linalg.inv(Xc.T @ Xc + np.eye(2)) @ Xc.T @ yc
    assert_allclose(m.coefficients[0], beta, atol=1e-10)
    assert_allclose(m.intercept[0], y.mean() - X.mean(axis=0) @ beta, atol=1e-10)


def test_singular_system_advises_lambda():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(SingularSystemError, match="lambda > 0"):
        fit_ridge(X, [1.0, 2.0, 3.0], lam=0.0)
    fit_ridge(X, [1.0, 2.0, 3.0], lam=1e-3)


def test_input_errors():
    with pytest.raises(InvalidInputError):
        fit_ridge(np.ones((3, 1)), np.ones(3), lam=-1.0)
    with pytest.raises(ShapeError):
        fit_ridge(np.ones((3, 1)), np.ones(4))
    m = RegressionModel(np.zeros((1, 3)), np.array([2.5]), 0.0)
    assert_allclose(predict_regression(m, [1.0, 2.0, 3.0]), [2.5])
    with pytest.raises(ShapeError):
        predict_regression(m, [1.0, 2.0])


def test_batch_equals_rowwise():
    r = make_rng(1)
    X, Y = r.normal(size=(20, 4)), r.normal(size=(20, 2))
    m = fit_ridge(X, Y, lam=0.1)
    batch = predict_regression(m, X)
    for i in range(len(X)):
        assert_allclose(batch[i], predict_regression(m, X[i]), atol=1e-12)


@given(st.integers(0, 10_000), st.floats(1e-6, 10.0))
def test_ridge_solution_is_local_minimum(seed, lam):
    r = make_rng(seed)
    X, y = r.normal(size=(12, 3)), r.normal(size=12)
    m = fit_ridge(X, y, lam)
    base = penalized_objective(m, X, y)
    for j in range(3):
        for step in (1e-3, -1e-3):
            moved = RegressionModel(m.coefficients.copy(), m.intercept, lam)
            moved.coefficients[0, j] += step
            assert penalized_objective(moved, X, y) >= base - 1e-12


@given(st.integers(0, 10_000))
def test_coefficient_norm_shrinks_with_lambda(seed):
    r = make_rng(seed)
    X, y = r.normal(size=(15, 4)), r.normal(size=15)
    norms = [np.linalg.norm(fit_ridge(X, y, lam).coefficients) for lam in (0.0, 0.01, 0.1, 1.0, 10.0, 100.0)]
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_cohort_fit_and_json(small_cohort):
    tr_c, te_c = split(small_cohort, 0.25, make_rng(0))
    tr, stats = normalize(tr_c)
    te, _ = normalize(te_c, stats)
    multi = fit_baseline(tr, DesignSpec(True, True))
    assert predict_baseline(multi, te).shape == (len(te), 2)
    single = fit_baseline(tr, DesignSpec(False, False), ("cog",))
    pred = predict_baseline(single, te)
    assert pred.shape == (len(te), 1)
    # raw units: predictions sit on the 0-30 score scale, not z-scores
    assert 10 < pred.mean() < 30
    back = RegressionModel.from_json(single.to_json())
    assert_allclose(predict_baseline(back, te), pred)
    with pytest.raises(InvalidInputError):
        fit_baseline(tr, DesignSpec(False, False))
