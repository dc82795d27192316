"""Log-determinant perturbation bounds and small linear-algebra helpers.

For a square ``B`` and ``0 < eps <= 1 / (6 ||B||_F)`` the checked bounds are::

    eps tr(B) - 5 eps^2 ||B||_F^2  <=  log|det(I + eps B)|  <=  eps tr(B) - 2 eps^2 ||B||_F^2

The lower bound is asserted by the battery. The upper one is evaluated and
reported only: it already fails for ``B = I_2`` at ``eps = 0.05``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_ORDER = 64


class PreconditionError(ValueError):
    """The inputs fall outside the range where the bounds are claimed."""


def _square(B) -> np.ndarray:
    A = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def frobenius_norm(B) -> float:
    """Square root of the sum of squared entries."""
    A = _square(B)
    return math.sqrt(float(np.sum(A * A)))


def eps_limit(B) -> float:
    """Largest admissible ``eps``, ``1 / (6 ||B||_F)``."""
    return 1.0 / (6.0 * frobenius_norm(B))


@dataclass(frozen=True)
class LogdetCheck:
    """Outcome of one bound check. Slacks are nonnegative exactly when the bound holds."""

    logdet: float
    lower: float
    upper: float
    lower_slack: float
    upper_slack: float

    @property
    def lower_ok(self) -> bool:
        return self.lower_slack >= 0

    @property
    def upper_ok(self) -> bool:
        return self.upper_slack >= 0


def log_abs_det(A) -> float:
    """``log|det A|`` from an LU factorisation; ``-inf`` for singular ``A``."""
    _, val = np.linalg.slogdet(_square(A))
    return float(val)


def logdet_bound_check(B, eps: float) -> LogdetCheck:
    """Evaluate both bounds for ``log|det(I + eps B)|``.

    Raises:
        PreconditionError: if ``B`` is zero, larger than ``MAX_ORDER``, or
            ``eps`` is not in ``(0, 1 / (6 ||B||_F)]``.
    """
    A = _square(B)
    if A.shape[0] > MAX_ORDER:
        raise PreconditionError(f"order {A.shape[0]} exceeds {MAX_ORDER}")
    fro = frobenius_norm(A)
    if fro == 0:
        raise PreconditionError("B must be nonzero")
    limit = 1.0 / (6.0 * fro)
    # a hair of relative slack so eps = eps_limit(B) itself is accepted
    if not 0 < eps <= limit * (1 + 1e-12):
        raise PreconditionError(f"eps = {eps} outside (0, {limit}]")
    ld = log_abs_det(np.eye(A.shape[0]) + eps * A)
    first = eps * float(np.trace(A))
    lower = first - 5.0 * eps**2 * fro**2
    upper = first - 2.0 * eps**2 * fro**2
    return LogdetCheck(logdet=ld, lower=lower, upper=upper, lower_slack=ld - lower, upper_slack=upper - ld)


def first_order_residual(B, eps: float) -> float:
    """``|log|det(I + eps B)| - eps tr(B)|``, the part the quadratic terms must absorb."""
    A = _square(B)
    return abs(log_abs_det(np.eye(A.shape[0]) + eps * A) - eps * float(np.trace(A)))


@dataclass
class BatteryResult:
    trials: int
    lower_passes: int
    upper_passes: int
    worst_lower_slack: float
    worst_upper_slack: float
    halving_ratios: np.ndarray  # residual(eps) / residual(eps / 2), one per trial

    @property
    def lower_all_ok(self) -> bool:
        return self.lower_passes == self.trials


def lemma_battery(trials: int = 1000, max_order: int = 6, seed: int = 0) -> BatteryResult:
    """Random standard-normal matrices of order 1..max_order, ``eps ~ U(0, limit]``."""
    rng = np.random.default_rng(seed)
    lower_ok = upper_ok = 0
    worst_lo = worst_up = math.inf
    ratios = np.empty(trials)
    for t in range(trials):
        order = int(rng.integers(1, max_order + 1))
        B = rng.standard_normal((order, order))
        # 1 - U[0, 1) lies in (0, 1], so eps never hits 0
        eps = (1.0 - rng.random()) * eps_limit(B)
        res = logdet_bound_check(B, eps)
        lower_ok += res.lower_ok
        upper_ok += res.upper_ok
        worst_lo = min(worst_lo, res.lower_slack)
        worst_up = min(worst_up, res.upper_slack)
        ratios[t] = first_order_residual(B, eps) / first_order_residual(B, eps / 2)
    return BatteryResult(trials, lower_ok, upper_ok, worst_lo, worst_up, ratios)


def power_iteration(A, iters: int = 1000, tol: float = 1e-12, seed: int = 0) -> float:
    """Largest-magnitude eigenvalue estimate of a symmetric matrix."""
    M = _square(A)
    v = np.random.default_rng(seed).standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v_next = w / norm
        lam_next = float(v_next @ M @ v_next)
        if abs(lam_next - lam) <= tol * max(1.0, abs(lam_next)):
            return lam_next
        v, lam = v_next, lam_next
    return lam
