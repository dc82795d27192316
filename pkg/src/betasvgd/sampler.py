"""SVGD and beta-SVGD particle dynamics.

The beta-SVGD step preconditions each particle's SVGD direction by
``max(N w_i, tau) ** beta`` where ``w`` are the Stein importance weights,
refreshed every ``refresh_period`` iterations by warm-started mirror
descent. Directions are averaged over particles (``1/N`` sum), so ``gamma``
has the same meaning for every particle count.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernel import KernelSpec, rbf_gram
from .stein import SteinMatrix, ksd_estimate, solve_stein_weights_matrix, stein_gram
from .target import Target


class DivergenceError(RuntimeError):
    """Particles became non-finite; ``iteration`` is the step that produced them."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"non-finite particle after iteration {iteration}; step size too large?")


@dataclass
class BetaConfig:
    """Hyperparameters of a beta-SVGD run.

    Attributes:
        beta: Weight exponent, must exceed -1. ``beta = 0`` is plain SVGD.
        gamma: Particle step size.
        tau: Lower clamp on ``N w_i``.
        refresh_period: Weights are refreshed when ``iteration % refresh_period == 0``.
        mirror_iters: Mirror-descent steps per refresh.
        mirror_step: Mirror-descent step size.
        total_iters: Number of particle updates.
        seed: Seed for minibatch selection.
        auto_scale: Divide the Stein matrix by its largest entry before mirror descent.
    """

    beta: float = -0.5
    gamma: float = 0.1
    tau: float = 0.01
    refresh_period: int = 1
    mirror_iters: int = 40
    mirror_step: float = 0.5
    total_iters: int = 100
    seed: int = 0
    auto_scale: bool = True

    def __post_init__(self):
        if not self.beta > -1:
            raise ValueError("beta must exceed -1")
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.refresh_period < 1:
            raise ValueError("refresh_period must be a positive integer")
        if self.mirror_iters < 0:
            raise ValueError("mirror_iters must be nonnegative")
        if not self.mirror_step > 0:
            raise ValueError("mirror_step must be positive")
        if self.total_iters < 0:
            raise ValueError("total_iters must be nonnegative")


@dataclass
class Trajectory:
    """Diagnostics recorded along a run, one row per recorded iteration."""

    dim: int
    iters: list = field(default_factory=list)
    ksd: list = field(default_factory=list)
    weight_dev: list = field(default_factory=list)
    means: list = field(default_factory=list)
    m2: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def append(self, it, ksd, weight_dev, X, wall_ms, extra=None):
        self.iters.append(it)
        self.ksd.append(ksd)
        self.weight_dev.append(weight_dev)
        self.means.append(X.mean(axis=0))
        self.m2.append((X**2).mean(axis=0))
        self.wall_ms.append(wall_ms)
        for key, val in (extra or {}).items():
            self.extra.setdefault(key, []).append(val)

    def __len__(self) -> int:
        return len(self.iters)

    def header(self) -> list[str]:
        cols = ["iter", "ksd", "weight_dev"]
        cols += [f"mean_{j}" for j in range(self.dim)]
        cols += [f"m2_{j}" for j in range(self.dim)]
        cols.append("wall_ms")
        return cols + list(self.extra)

    def rows(self):
        for k in range(len(self)):
            row = [self.iters[k], self.ksd[k], self.weight_dev[k]]
            row += list(self.means[k]) + list(self.m2[k]) + [self.wall_ms[k]]
            row += [self.extra[key][k] for key in self.extra]
            yield row

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            for row in self.rows():
                writer.writerow([fmt_num(v) for v in row])


def fmt_num(v) -> str:
    """Locale-independent, round-trip exact number formatting."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def weight_deviation(w: np.ndarray) -> float:
    """``sum_i |w_i - 1/N|``."""
    return float(np.abs(w - 1.0 / w.size).sum())


def svgd_direction(
    particles: np.ndarray,
    target: Target,
    spec: KernelSpec,
    scores: np.ndarray | None = None,
) -> np.ndarray:
    """Averaged SVGD direction.

    Row ``i`` is ``(1/N) sum_j [s(x_j) k(x_i, x_j) + grad_{x_j} k(x_i, x_j)]``.
    """
    X = np.asarray(particles, dtype=float)
    if scores is None:
        scores = target.score(X)
    h = spec.resolve(X).bandwidth
    K, diff = rbf_gram(X, h)
    # grad_{x_j} k(x_i, x_j) = (2/h)(x_i - x_j) k(x_i, x_j)
    repulsion = (2.0 / h) * np.einsum("ij,ijk->ik", K, diff)
    return (K @ scores + repulsion) / X.shape[0]


def weight_prefactor(w: np.ndarray, beta: float, tau: float) -> np.ndarray:
    """``max(N w_i, tau) ** beta``."""
    return np.maximum(w.size * w, tau) ** beta


def svgd_step(particles, gamma, target, spec, scores=None) -> np.ndarray:
    return particles + gamma * svgd_direction(particles, target, spec, scores)


def beta_svgd_step(
    particles: np.ndarray,
    w: np.ndarray,
    cfg: BetaConfig,
    target: Target,
    spec: KernelSpec,
    scores: np.ndarray | None = None,
) -> np.ndarray:
    """One preconditioned update ``x_i + gamma max(N w_i, tau)^beta phi(x_i)``."""
    X = np.asarray(particles, dtype=float)
    if w.shape != (X.shape[0],):
        raise ValueError(f"weights have shape {w.shape}, expected ({X.shape[0]},)")
    direction = svgd_direction(X, target, spec, scores)
    pref = weight_prefactor(w, cfg.beta, cfg.tau)
    return X + cfg.gamma * (pref[:, None] * direction)


def run_svgd(init: np.ndarray, gamma: float, n: int, target: Target, spec: KernelSpec, seed: int = 0, callback=None):
    """Plain SVGD that never touches importance weights.

    Used as the reference for the ``beta = 0`` reduction. Scores are drawn
    with the same per-iteration rng consumption as :func:`run_beta_svgd`.
    """
    rng = np.random.default_rng(seed)
    X = np.array(init, dtype=float)
    for it in range(n):
        if callback is not None:
            callback(it, X)
        scores = target.score(X, rng=rng)
        with np.errstate(over="ignore", invalid="ignore"):  # caught just below
            X = svgd_step(X, gamma, target, spec, scores)
        if not np.all(np.isfinite(X)):
            raise DivergenceError(it)
    if callback is not None:
        callback(n, X)
    return X


def run_beta_svgd(
    init: np.ndarray,
    cfg: BetaConfig,
    target: Target,
    spec: KernelSpec,
    record_every: int = 1,
    weight_spec: KernelSpec | None = None,
    metrics: Callable[[np.ndarray], dict] | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
    record_wall_time: bool = True,
) -> tuple[Trajectory, np.ndarray]:
    """Run beta-SVGD for ``cfg.total_iters`` particle updates.

    At iteration ``l`` the weights are refreshed if ``l % refresh_period == 0``
    (warm start from the previous weights; uniform before the first refresh),
    diagnostics are recorded every ``record_every`` iterations and at the
    end, and then the particles move. The recorded KSD is the uniform-weight
    estimate for the current particles.

    Args:
        init: Initial particles, shape ``(N, d)``.
        weight_spec: Kernel inside the Stein matrix; defaults to ``spec``.
        metrics: Extra per-row diagnostics computed from the particles.
        callback: Called as ``callback(l, X, w)`` before each update and once
            after the last one.
        record_wall_time: If false the ``wall_ms`` column is written as 0, which
            keeps outputs byte-identical across runs.

    Returns:
        ``(trajectory, final_particles)``.

    Raises:
        DivergenceError: if any coordinate becomes non-finite.
    """
    if record_every < 1:
        raise ValueError("record_every must be a positive integer")
    weight_spec = spec if weight_spec is None else weight_spec
    rng = np.random.default_rng(cfg.seed)
    X = np.array(init, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"initial particles must be (N, d) with N >= 1, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("initial particles must be finite")
    n_part = X.shape[0]
    w = np.full(n_part, 1.0 / n_part)
    traj = Trajectory(X.shape[1])
    start = time.perf_counter()

    for it in range(cfg.total_iters + 1):
        last = it == cfg.total_iters
        record = last or it % record_every == 0
        scores = target.score(X, rng=rng)
        raw = None
        if it % cfg.refresh_period == 0:
            raw = stein_gram(X, scores, weight_spec.resolve(X).bandwidth)
            scale = max(1.0, float(np.max(np.abs(raw)))) if cfg.auto_scale else 1.0
            w, _ = solve_stein_weights_matrix(SteinMatrix(raw / scale, scale), w, cfg.mirror_iters, cfg.mirror_step)
        if record:
            if raw is None:
                raw = stein_gram(X, scores, weight_spec.resolve(X).bandwidth)
            ksd = ksd_estimate(X, None, target, weight_spec, K=SteinMatrix(raw))
            wall = 1000.0 * (time.perf_counter() - start) if record_wall_time else 0.0
            traj.append(it, ksd, weight_deviation(w), X, wall, metrics(X) if metrics else None)
        if callback is not None:
            callback(it, X, w)
        if last:
            break
        with np.errstate(over="ignore", invalid="ignore"):  # caught just below
            X = beta_svgd_step(X, w, cfg, target, spec, scores)
        if not np.all(np.isfinite(X)):
            raise DivergenceError(it)
    return traj, X

