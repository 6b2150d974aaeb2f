from __future__ import annotations

import itertools

import numpy as np
import pytest

from hidvar.cov_estimator import (
    ResidualAnsatz,
    certify,
    compute_residual,
    enumerate_solvents,
    estimate_cov,
    latent_roots,
    roots_distinct,
    solve_ansatz,
)
from hidvar.errors import AssumptionError, ConditioningError, InsufficientDataError, StageError
from hidvar.var_core import AutocovSequence, VarParams, analytic_autocov, sample_autocov, sample_stable_var, simulate

SCALAR = VarParams.from_blocks(np.array([[0.5]]), np.array([[1.0]]), np.array([[0.0]]), np.array([[0.3]]))
DIAG = ResidualAnsatz(np.diag([3.0, 7.0]), np.diag([-2.0, -12.0]))


def test_scalar_ansatz_closed_form():
    an = solve_ansatz(analytic_autocov(SCALAR, 3).restrict(1))
    assert an.U1[0, 0] == pytest.approx(0.8, abs=1e-10)
    assert an.U2[0, 0] == pytest.approx(-0.15, abs=1e-10)


def test_ansatz_without_hidden_channels_annihilates_b():
    p = sample_stable_var(2, 0, seed=3)
    an = solve_ansatz(analytic_autocov(p, 3), rank=2)
    np.testing.assert_allclose(an.U1 @ p.B + an.U2, p.B @ p.B, atol=1e-10)
    assert any(np.abs(S - p.B).max() < 1e-8 for S in enumerate_solvents(an).solvents)
    with pytest.raises(ConditioningError):
        solve_ansatz(analytic_autocov(p, 3))


def test_ansatz_from_long_sample_matches_analytic():
    x = simulate(SCALAR, 1_000_000, seed=0).observed(1)
    an = solve_ansatz(sample_autocov(x, 3))
    # the ansatz is weakly identified here, so its sampling error is a few hundredths
    assert abs(an.U1[0, 0] - 0.8) < 0.03 and abs(an.U2[0, 0] + 0.15) < 0.03


def test_residual_examples():
    x = np.random.default_rng(0).normal(size=(30, 2))
    zero = ResidualAnsatz(np.zeros((2, 2)), np.zeros((2, 2)))
    np.testing.assert_array_equal(compute_residual(x, zero), x[2:])
    np.testing.assert_array_equal(compute_residual(np.zeros((30, 2)), DIAG), 0.0)


def test_model_residual_uncorrelated_with_lag_two():
    L = 100_000
    x = simulate(SCALAR, L, seed=1).observed(1).centered().values
    an = solve_ansatz(analytic_autocov(SCALAR, 3).restrict(1))
    r = compute_residual(x, an)[:, 0]
    prod = r * x[:-2, 0]
    # r is MA(1), so use a lag-one long-run variance for the standard error
    c = prod - prod.mean()
    lrv = c @ c / c.size + 2 * (c[1:] @ c[:-1]) / c.size
    assert abs(prod.mean()) < 3 * np.sqrt(lrv / c.size)


def test_latent_roots_examples():
    an = ResidualAnsatz(np.array([[0.8]]), np.array([[-0.15]]))
    np.testing.assert_allclose(np.sort(latent_roots(an).real), [0.3, 0.5])
    np.testing.assert_allclose(np.sort(latent_roots(DIAG).real), [1, 2, 3, 4])
    zero = ResidualAnsatz(np.zeros((2, 2)), np.zeros((2, 2)))
    assert not roots_distinct(latent_roots(zero))
    with pytest.raises(AssumptionError):
        enumerate_solvents(zero)


def test_scalar_solvents():
    ss = enumerate_solvents(ResidualAnsatz(np.array([[0.8]]), np.array([[-0.15]])))
    np.testing.assert_allclose(sorted(S[0, 0] for S in ss.solvents), [0.3, 0.5])


def test_diagonal_solvents():
    ss = enumerate_solvents(DIAG)
    got = sorted(tuple(np.round(np.diag(S), 10)) for S in ss.solvents)
    assert got == [(1, 3), (1, 4), (2, 3), (2, 4)]
    assert ss.skipped_subsets == 2
    for S in ss.solvents:
        np.testing.assert_allclose(S, np.diag(np.diag(S)), atol=1e-12)
        assert certify(S, DIAG) < 1e-12


def test_solvent_count_bound_and_certificates():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(1, 3))
        an = ResidualAnsatz(rng.normal(size=(n, n)), rng.normal(size=(n, n)))
        ss = enumerate_solvents(an)
        assert ss.n <= len(list(itertools.combinations(range(2 * n), n)))
        assert all(r <= 1e-6 for r in ss.residuals)


@pytest.mark.parametrize("seed", range(5))
def test_analytic_pipeline_contains_b_with_fewer_hidden_channels(seed):
    p = sample_stable_var(2, 1, d_zero=True, seed=seed)
    an = solve_ansatz(analytic_autocov(p, 3).restrict(2), rank=3)
    ss = enumerate_solvents(an)
    best = min(range(ss.n), key=lambda i: np.abs(ss.solvents[i] - p.B).max())
    assert np.abs(ss.solvents[best] - p.B).max() < 1e-6
    assert ss.residuals[best] < 1e-8


def test_real_solvent_with_complex_roots():
    # build the equation from two known real solvents, one of them a scaled rotation
    S = 0.5 * np.array([[0.0, -1.0], [1.0, 0.0]])
    T = np.array([[0.3, 0.1], [0.0, 0.7]])
    U1 = (S @ S - T @ T) @ np.linalg.inv(S - T)
    an = ResidualAnsatz(U1, S @ S - U1 @ S)
    ss = enumerate_solvents(an)
    assert any(np.abs(M - S).max() < 1e-8 for M in ss.solvents)
    assert any(np.abs(M - T).max() < 1e-8 for M in ss.solvents)
    for M in ss.solvents:
        assert np.isrealobj(M) and certify(M, an) < 1e-10
    assert ss.complex_solvents


def test_double_roots_are_rejected():
    with pytest.raises(AssumptionError):
        enumerate_solvents(ResidualAnsatz(np.zeros((2, 2)), -np.eye(2)))


def test_estimate_cov_end_to_end():
    p = VarParams.from_blocks(np.array([[0.6]]), np.array([[0.9]]), np.array([[0.0]]), np.array([[-0.4]]))
    x = simulate(p, 1_000_000, seed=2).observed(1)
    rep = estimate_cov(x, seed=2)
    assert rep.B is None and rep.candidates
    assert min(abs(c[0, 0] - 0.6) for c in rep.candidates) < 0.01
    assert rep.diagnostics["G2"] is True and rep.diagnostics["assumptions_verified"] is False
    assert rep.to_dict()["seed"] == 2


def test_estimate_cov_without_hidden_channels():
    p = sample_stable_var(2, 0, seed=7)
    x = simulate(p, 100_000, seed=7)
    rep = estimate_cov(x, k_z=0)
    assert min(np.abs(c - p.B).max() for c in rep.candidates) < 0.05


def test_estimate_cov_errors():
    with pytest.raises(InsufficientDataError):
        estimate_cov(simulate(SCALAR, 3, seed=0).observed(1))
    x = simulate(sample_stable_var(2, 0, seed=1), 500, seed=0)
    with pytest.raises(StageError) as info:
        estimate_cov(x, k_z=5)
    assert info.value.stage == "ansatz"


def test_ill_conditioned_ansatz():
    g = AutocovSequence(np.ones((4, 1, 1)), "test")
    with pytest.raises(ConditioningError):
        solve_ansatz(g)
