from __future__ import annotations

import numpy as np
import pytest

from hidvar.errors import ConditioningError, InsufficientDataError
from hidvar.granger import practical_granger, practical_granger_sample
from hidvar.var_core import AutocovSequence, TimeSeriesSample, VarParams, analytic_autocov, simulate

A43 = np.array([[0.9, 0.0, 0.5], [0.1, 0.1, 0.8], [0.0, 0.0, 0.9]])


def test_confounded_example_values():
    g = analytic_autocov(VarParams(A43, np.eye(3), 2), 1).restrict(2)
    est = practical_granger(g)
    np.testing.assert_allclose(est.B_pG, [[0.89, 0.35], [0.08, 0.65]], atol=0.01)
    # the structural B is [[0.9, 0], [0.1, 0.1]]: the confounder biases every entry but (1,1)
    assert abs(est.B_pG[1, 1] - 0.1) > 0.5


def test_no_confounder_recovers_b():
    g = analytic_autocov(VarParams(np.array([[0.5]]), np.eye(1), 1), 1)
    assert practical_granger(g).B_pG[0, 0] == pytest.approx(0.5)


def test_ill_conditioned_gamma0():
    g = AutocovSequence(np.array([[[1.0, 1.0], [1.0, 1.0]], [[0.5, 0.0], [0.0, 0.5]]]), "test")
    with pytest.raises(ConditioningError):
        practical_granger(g)


def test_least_squares_matches_regression():
    x = simulate(VarParams(np.array([[0.4, 0.2], [-0.1, 0.3]]), np.eye(2), 2), 2000, seed=0)
    est = practical_granger_sample(x, "ls").B_pG
    v = x.values - x.values.mean(axis=0)
    coef, *_ = np.linalg.lstsq(v[:-1], v[1:], rcond=None)
    np.testing.assert_allclose(est, coef.T, atol=1e-12)
    yw = practical_granger_sample(x).B_pG
    assert np.abs(yw - est).max() < 0.01


def test_sample_validation():
    with pytest.raises(InsufficientDataError):
        practical_granger_sample(TimeSeriesSample(np.zeros((2, 1))), "ls")
    with pytest.raises(ValueError):
        practical_granger_sample(TimeSeriesSample(np.ones((10, 1))), "bogus")
