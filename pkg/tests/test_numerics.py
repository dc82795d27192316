import math
import time

import numpy as np
import pytest

from betasvgd.numerics import (
    MAX_ORDER,
    PreconditionError,
    eps_limit,
    first_order_residual,
    frobenius_norm,
    lemma_battery,
    log_abs_det,
    logdet_bound_check,
    power_iteration,
)


@pytest.mark.parametrize(
    "B, expected",
    [(np.zeros((3, 3)), 0.0), (np.eye(4), 2.0), ([[1, 2], [3, 4]], math.sqrt(30))],
)
def test_frobenius_examples(B, expected):
    assert frobenius_norm(B) == pytest.approx(expected, abs=1e-15)


def test_log_abs_det_against_eigenvalues():
    rng = np.random.default_rng(3)
    for order in range(1, 7):
        A = rng.standard_normal((order, order))
        expected = float(np.sum(np.log(np.abs(np.linalg.eigvals(A)))))
        assert log_abs_det(A) == pytest.approx(expected, abs=1e-10)
    assert log_abs_det(np.zeros((2, 2))) == -math.inf


def test_rotation_probe_breaks_upper_bound():
    res = logdet_bound_check([[0, 1], [-1, 0]], 0.05)
    assert res.logdet == pytest.approx(math.log(1 + 0.05**2), abs=1e-15)
    assert (res.lower, res.upper) == pytest.approx((-0.025, -0.01), abs=1e-15)
    assert res.lower_ok
    assert not res.upper_ok


def test_identity_probe_breaks_upper_bound():
    res = logdet_bound_check(np.eye(2), 0.05)
    assert res.logdet == pytest.approx(2 * math.log(1.05), abs=1e-15)
    assert (res.lower, res.upper) == pytest.approx((0.075, 0.09), abs=1e-15)
    assert res.lower_ok
    assert not res.upper_ok
    assert res.upper_slack == pytest.approx(0.09 - 2 * math.log(1.05), abs=1e-15)


def test_eps_at_the_limit_is_accepted():
    B = [[1.0, 2.0], [0.5, -1.0]]
    assert logdet_bound_check(B, eps_limit(B)).lower_ok


@pytest.mark.parametrize(
    "B, eps",
    [
        (np.zeros((2, 2)), 0.1),
        (np.eye(2), 0.0),
        (np.eye(2), -0.01),
        (np.eye(2), 1.01 / (6 * math.sqrt(2))),
        (np.eye(MAX_ORDER + 1), 1e-4),
    ],
)
def test_precondition_errors(B, eps):
    with pytest.raises(PreconditionError):
        logdet_bound_check(B, eps)


def test_malformed_input():
    with pytest.raises(ValueError, match="square"):
        frobenius_norm(np.ones((2, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        logdet_bound_check([[np.nan]], 0.1)


def test_precondition_is_not_a_lemma_failure():
    assert not issubclass(PreconditionError, AssertionError)
    assert issubclass(PreconditionError, ValueError)


def test_residual_shrinks_quadratically_for_symmetric_matrix():
    B = np.array([[2.0, 1.0], [1.0, -1.0]])
    eps = eps_limit(B) / 4
    ratio = first_order_residual(B, eps) / first_order_residual(B, eps / 2)
    assert 3.5 <= ratio <= 4.5


def test_battery_lower_bound_everywhere():
    t0 = time.perf_counter()
    res = lemma_battery(1000, 6, seed=0)
    assert time.perf_counter() - t0 < 5
    assert res.trials == 1000
    assert res.lower_all_ok
    assert res.worst_lower_slack >= 0
    # the upper direction is informational; record that it is not a pass
    assert res.upper_passes < res.trials


def test_battery_halving_ratio():
    res = lemma_battery(1000, 6, seed=0)
    assert 3.5 <= float(np.median(res.halving_ratios)) <= 4.5
    assert np.all(res.halving_ratios > 1)


def test_halving_outliers_come_from_small_quadratic_term():
    # residual ~ eps^2 tr(B^2)/2 - eps^3 tr(B^3)/3; when tr(B^2) is near zero
    # the cubic term is not negligible and the ratio drifts toward 8
    rng = np.random.default_rng(0)
    for _ in range(1000):
        order = int(rng.integers(1, 7))
        B = rng.standard_normal((order, order))
        eps = (1.0 - rng.random()) * eps_limit(B)
        quad = abs(np.trace(B @ B)) * eps**2 / 2
        cubic = abs(np.trace(B @ B @ B)) * eps**3 / 3
        ratio = first_order_residual(B, eps) / first_order_residual(B, eps / 2)
        if cubic < 0.2 * quad:
            assert 3.5 <= ratio <= 4.5


def test_battery_is_seeded():
    a, b = lemma_battery(50, 4, seed=7), lemma_battery(50, 4, seed=7)
    np.testing.assert_array_equal(a.halving_ratios, b.halving_ratios)
    assert a.worst_lower_slack == b.worst_lower_slack


def test_power_iteration():
    A = np.diag([3.0, -1.0, 0.5])
    assert power_iteration(A) == pytest.approx(3.0, abs=1e-8)
    rng = np.random.default_rng(0)
    M = rng.standard_normal((5, 5))
    S = M + M.T
    ev = np.linalg.eigvalsh(S)
    assert abs(power_iteration(S, iters=5000)) == pytest.approx(np.max(np.abs(ev)), rel=1e-6)
    assert power_iteration(np.zeros((2, 2))) == 0.0
