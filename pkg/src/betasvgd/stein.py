"""Stein kernel matrices, Stein importance weights and KSD estimates.

The Stein kernel built from the RBF kernel ``k`` and the score ``s = -grad V``
is::

    k_pi(x, y) = k <s(x), s(y)> + <s(x), grad_y k> + <s(y), grad_x k>
                 + tr(grad_x grad_y k)

Its Gram matrix over a particle set is positive semidefinite, and the Stein
importance weights minimise ``1/2 w^T K_pi w`` over the probability simplex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import KernelSpec, kernel_cross_trace, kernel_eval, kernel_grad_x, rbf_gram
from .target import Target

PSD_RTOL = 1e-8


@dataclass
class SteinMatrix:
    """``entries = K_pi / scale``; ``scale`` is 1 unless auto-scaling kicked in."""

    entries: np.ndarray
    scale: float = 1.0

    @property
    def raw(self) -> np.ndarray:
        return self.entries * self.scale

    def __len__(self) -> int:
        return self.entries.shape[0]


def stein_kernel_entry(x, y, target: Target, spec: KernelSpec) -> float:
    """Single Stein-kernel value ``k_pi(x, y)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    sx, sy = target.score(x), target.score(y)
    gx = kernel_grad_x(x, y, spec)
    gy = kernel_grad_x(y, x, spec)  # grad_y k(x, y), by symmetry of k
    return float(
        kernel_eval(x, y, spec) * np.dot(sx, sy)
        + np.dot(sx, gy)
        + np.dot(sy, gx)
        + kernel_cross_trace(x, y, spec)
    )


def stein_gram(X: np.ndarray, scores: np.ndarray, h: float) -> np.ndarray:
    """Unscaled Stein-kernel matrix from positions and precomputed scores."""
    X = np.asarray(X, dtype=float)
    S = np.asarray(scores, dtype=float)
    d = X.shape[1]
    K, diff = rbf_gram(X, h)
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    sx_diff = np.einsum("ik,ijk->ij", S, diff)  # <s(x_i), x_i - x_j>
    sy_diff = np.einsum("jk,ijk->ij", S, diff)  # <s(x_j), x_i - x_j>
    inner = S @ S.T + (2.0 / h) * (sx_diff - sy_diff) + 2.0 * d / h - 4.0 * r2 / h**2
    Kp = K * inner
    # exact symmetry; the two halves differ only by round-off
    return 0.5 * (Kp + Kp.T)


def build_stein_matrix(
    particles: np.ndarray,
    target: Target,
    spec: KernelSpec,
    auto_scale: bool = True,
    scores: np.ndarray | None = None,
) -> SteinMatrix:
    """Stein matrix over a particle set, optionally divided by its largest entry.

    ``scores`` lets callers reuse score evaluations they already made.
    """
    X = np.asarray(particles, dtype=float)
    if scores is None:
        scores = target.score(X)
    h = spec.resolve(X).bandwidth
    raw = stein_gram(X, scores, h)
    scale = max(1.0, float(np.max(np.abs(raw)))) if auto_scale else 1.0
    return SteinMatrix(raw / scale if scale != 1.0 else raw, scale)


def _entries(K) -> np.ndarray:
    return K.entries if isinstance(K, SteinMatrix) else np.asarray(K, dtype=float)


def mirror_descent_step(w: np.ndarray, K, r: float) -> np.ndarray:
    """One exponentiated-gradient step on ``1/2 w^T K w`` over the simplex.

    ``w_i <- w_i exp(-r (K w)_i) / sum_l w_l exp(-r (K w)_l)``, with the
    exponent shifted by its maximum before exponentiating.
    """
    A = _entries(K)
    if not np.all(np.isfinite(A)):
        raise ValueError("Stein matrix has non-finite entries")
    if not r > 0:
        raise ValueError(f"mirror step must be positive, got {r}")
    expo = -r * (A @ w)
    u = w * np.exp(expo - expo.max())
    return u / u.sum()


def quadratic_objective(w: np.ndarray, K) -> float:
    A = _entries(K)
    return 0.5 * float(w @ A @ w)


def solve_stein_weights_matrix(K, init: np.ndarray | None = None, m: int = 40, r: float = 0.5):
    """Run ``m`` mirror-descent steps on a prebuilt Stein matrix.

    Returns:
        ``(weights, objective)`` with the objective ``1/2 w^T K w`` evaluated on
        the matrix as given (scaled entries if ``K`` is a scaled SteinMatrix).
    """
    n = len(_entries(K))
    w = np.full(n, 1.0 / n) if init is None else np.asarray(init, dtype=float).copy()
    if w.shape != (n,):
        raise ValueError(f"initial weights have shape {w.shape}, expected ({n},)")
    if m < 0:
        raise ValueError("number of mirror steps must be nonnegative")
    for _ in range(m):
        w = mirror_descent_step(w, K, r)
    return w, quadratic_objective(w, K)


def solve_stein_weights(
    particles: np.ndarray,
    target: Target,
    spec: KernelSpec,
    init: np.ndarray | None = None,
    m: int = 40,
    r: float = 0.5,
    auto_scale: bool = True,
):
    """Stein importance weights of a particle set.

    Builds the (auto-scaled) Stein matrix and runs ``m`` mirror-descent
    steps from ``init`` (uniform when omitted).

    Returns:
        ``(weights, objective)``; the objective is reported in unscaled units.
    """
    K = build_stein_matrix(particles, target, spec, auto_scale=auto_scale)
    w, obj = solve_stein_weights_matrix(K, init, m, r)
    return w, obj * K.scale


def ksd_estimate(particles: np.ndarray, w: np.ndarray | None, target: Target, spec: KernelSpec, K=None) -> float:
    """Weighted V-statistic ``w^T K_pi w`` of the squared KSD.

    Uniform ``w`` gives the standard estimator of the Stein Fisher
    information of the empirical measure. ``K`` may be a prebuilt
    :class:`SteinMatrix`; its unscaled entries are used.
    """
    if K is None:
        K = build_stein_matrix(particles, target, spec, auto_scale=False)
    A = K.raw if isinstance(K, SteinMatrix) else np.asarray(K, dtype=float)
    n = A.shape[0]
    w = np.full(n, 1.0 / n) if w is None else np.asarray(w, dtype=float)
    val = float(w @ A @ w)
    if val < 0:
        lam = float(np.max(np.abs(np.linalg.eigvalsh(A))))
        if val < -PSD_RTOL * lam:
            raise ArithmeticError(f"Stein quadratic form is negative ({val:.3e}); k_pi is broken")
        val = 0.0
    return val
