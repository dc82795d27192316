"""RBF kernel and the derivatives needed by SVGD directions and Stein kernels.

The kernel is ``k(x, y) = exp(-||x - y||^2 / h)``. Pointwise functions take
single points of shape ``(d,)``; the ``pairwise_*`` helpers work on particle
sets of shape ``(N, d)`` and are what the samplers use.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

BANDWIDTH_RULES = ("fixed", "dimension", "median")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus a rule for picking the bandwidth ``h``.

    Attributes:
        family: Only ``"rbf"`` is supported.
        bandwidth: The ``h`` in ``exp(-||x-y||^2 / h)``. Required when
            ``bandwidth_rule == "fixed"``, ignored otherwise.
        bandwidth_rule: ``"fixed"``, ``"dimension"`` (``h = d``) or
            ``"median"`` (median pairwise squared distance of a particle set).
    """

    family: str = "rbf"
    bandwidth: float | None = None
    bandwidth_rule: str = "dimension"

    def __post_init__(self):
        if self.family != "rbf":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if self.bandwidth_rule not in BANDWIDTH_RULES:
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed":
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @classmethod
    def fixed(cls, bandwidth: float) -> KernelSpec:
        return cls(bandwidth=float(bandwidth), bandwidth_rule="fixed")

    def bandwidth_for(self, dim: int) -> float:
        """Bandwidth for points of dimension ``dim`` (no particle set needed)."""
        if self.bandwidth_rule == "fixed":
            return float(self.bandwidth)
        if self.bandwidth_rule == "dimension":
            return float(dim)
        raise ValueError("median bandwidth needs a particle set; call resolve() first")

    def resolve(self, particles: np.ndarray) -> KernelSpec:
        """Return a ``fixed`` spec with the bandwidth evaluated on ``particles``."""
        X = np.asarray(particles, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"particles must be (N, d), got shape {X.shape}")
        if self.bandwidth_rule == "median":
            h = median_sqdist(X)
            if not h > 0:
                # all particles coincide; fall back to the dimension rule
                h = float(X.shape[1])
        else:
            h = self.bandwidth_for(X.shape[1])
        return replace(self, bandwidth=h, bandwidth_rule="fixed")


def _pair(x, y):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def kernel_eval(x, y, spec: KernelSpec) -> float:
    """``k(x, y)``; symmetric, equal to 1 on the diagonal."""
    x, y = _pair(x, y)
    h = spec.bandwidth_for(x.size)
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / h))


def kernel_grad_x(x, y, spec: KernelSpec) -> np.ndarray:
    """Gradient of ``k(x, y)`` in its first argument: ``-(2/h)(x - y) k(x, y)``."""
    x, y = _pair(x, y)
    h = spec.bandwidth_for(x.size)
    diff = x - y
    return -(2.0 / h) * diff * np.exp(-np.dot(diff, diff) / h)


def kernel_cross_trace(x, y, spec: KernelSpec) -> float:
    """``tr(grad_x grad_y k(x, y)) = (2d/h - 4||x-y||^2/h^2) k(x, y)``."""
    x, y = _pair(x, y)
    d = x.size
    h = spec.bandwidth_for(d)
    diff = x - y
    r2 = np.dot(diff, diff)
    return float((2.0 * d / h - 4.0 * r2 / h**2) * np.exp(-r2 / h))


def pairwise_diff(X: np.ndarray) -> np.ndarray:
    """``diff[i, j] = X[i] - X[j]``, shape ``(N, N, d)``."""
    return X[:, None, :] - X[None, :, :]


def pairwise_sqdist(X: np.ndarray) -> np.ndarray:
    diff = pairwise_diff(X)
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_sqdist(X: np.ndarray) -> float:
    """Median of the squared distances over distinct pairs ``i < j``."""
    n = X.shape[0]
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, k=1)
    return float(np.median(pairwise_sqdist(X)[iu]))


def rbf_gram(X: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Kernel matrix and pairwise differences for a particle set.

    Returns:
        ``(K, diff)`` with ``K[i, j] = k(x_i, x_j)`` and ``diff[i, j] = x_i - x_j``.
    """
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    diff = pairwise_diff(X)
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-r2 / h), diff
