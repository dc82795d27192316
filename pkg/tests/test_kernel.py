import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from betasvgd.kernel import (
    KernelSpec,
    kernel_cross_trace,
    kernel_eval,
    kernel_grad_x,
    median_sqdist,
    pairwise_sqdist,
    rbf_gram,
)

coords = st.floats(-3, 3, allow_nan=False)


def fd_grad(f, x, step=1e-5):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (f(x + e) - f(x - e)) / (2 * step)
    return g


@given(st.integers(1, 6), st.floats(0.1, 10), st.data())
def test_kernel_is_one_on_the_diagonal(d, h, data):
    x = np.array(data.draw(st.lists(coords, min_size=d, max_size=d)))
    assert kernel_eval(x, x, KernelSpec.fixed(h)) == 1.0


def test_closed_form_values():
    assert kernel_eval([0.0], [2.0], KernelSpec.fixed(1)) == pytest.approx(math.exp(-4), rel=1e-15)
    assert kernel_eval([0.0, 0.0], [1.0, 1.0], KernelSpec.fixed(2)) == pytest.approx(math.exp(-1), rel=1e-15)
    # default rule h = d
    assert kernel_eval([0.0, 0.0], [1.0, 1.0], KernelSpec()) == pytest.approx(math.exp(-1), rel=1e-15)


@given(st.integers(1, 5), st.data())
def test_symmetric_and_bounded(d, data):
    x = np.array(data.draw(st.lists(coords, min_size=d, max_size=d)))
    y = np.array(data.draw(st.lists(coords, min_size=d, max_size=d)))
    spec = KernelSpec()
    kxy = kernel_eval(x, y, spec)
    assert kxy == kernel_eval(y, x, spec)
    assert 0 <= kxy <= 1.0


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(1, 11))
        h = float(rng.uniform(0.5, 5.0)) * d
        x, y = rng.standard_normal(d), rng.standard_normal(d)
        spec = KernelSpec.fixed(h)
        fd = fd_grad(lambda z: kernel_eval(z, y, spec), x)
        an = kernel_grad_x(x, y, spec)
        assert np.linalg.norm(an - fd) <= 1e-6 * max(np.linalg.norm(an), 1e-3)


def test_gradient_examples():
    spec = KernelSpec.fixed(1)
    np.testing.assert_allclose(kernel_grad_x([1.0], [0.0], spec), [-2 * math.exp(-1)], rtol=1e-14)
    fd = fd_grad(lambda z: kernel_eval(z, [0.0], spec), np.array([1.0]))
    np.testing.assert_allclose(kernel_grad_x([1.0], [0.0], spec), fd, atol=1e-8)
    np.testing.assert_array_equal(kernel_grad_x([0.3, -1.0], [0.3, -1.0], KernelSpec()), [0.0, 0.0])


@given(st.integers(1, 4), st.data())
def test_gradient_is_antisymmetric(d, data):
    x = np.array(data.draw(st.lists(coords, min_size=d, max_size=d)))
    y = np.array(data.draw(st.lists(coords, min_size=d, max_size=d)))
    spec = KernelSpec()
    np.testing.assert_allclose(kernel_grad_x(x, y, spec), -kernel_grad_x(y, x, spec), atol=1e-15)


def nested_fd_trace(x, y, spec, step=1e-4):
    # sum_k d/dy_k of (d/dx_k k), the inner derivative taken analytically-free by FD
    total = 0.0
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step

        def dk_dxk(yy):
            return (kernel_eval(x + e, yy, spec) - kernel_eval(x - e, yy, spec)) / (2 * step)

        total += (dk_dxk(y + e) - dk_dxk(y - e)) / (2 * step)
    return total


def test_cross_trace_examples():
    assert kernel_cross_trace(np.zeros(3), np.zeros(3), KernelSpec.fixed(3)) == pytest.approx(2.0, rel=1e-15)
    assert nested_fd_trace(np.zeros(3), np.zeros(3), KernelSpec.fixed(3)) == pytest.approx(2.0, rel=1e-4)
    assert kernel_cross_trace([0.0], [1.0], KernelSpec.fixed(1)) == pytest.approx(-2 * math.exp(-1), rel=1e-15)
    # root of 2d/h - 4 r^2/h^2 at r^2 = d h / 2 with h = d
    d = 4
    x = np.zeros(d)
    y = np.full(d, math.sqrt(d * d / 2 / d))
    assert abs(kernel_cross_trace(x, y, KernelSpec())) < 1e-15


def test_cross_trace_matches_nested_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(30):
        d = int(rng.integers(1, 6))
        spec = KernelSpec.fixed(float(rng.uniform(0.5, 3.0)) * d)
        x, y = rng.standard_normal(d), 0.5 * rng.standard_normal(d)
        an = kernel_cross_trace(x, y, spec)
        fd = nested_fd_trace(x, y, spec)
        assert abs(an - fd) <= 1e-4 * max(abs(an), 1e-2)


def test_dimension_mismatch_and_bad_bandwidth():
    with pytest.raises(ValueError, match="dimension mismatch"):
        kernel_eval([0.0, 1.0], [0.0], KernelSpec())
    with pytest.raises(ValueError, match="dimension mismatch"):
        kernel_grad_x([0.0], [0.0, 1.0], KernelSpec())
    with pytest.raises(ValueError, match="bandwidth must be positive"):
        KernelSpec.fixed(0.0)
    with pytest.raises(ValueError, match="bandwidth must be positive"):
        KernelSpec.fixed(-1.0)
    with pytest.raises(ValueError, match="unsupported kernel family"):
        KernelSpec(family="imq")
    with pytest.raises(ValueError, match="unknown bandwidth rule"):
        KernelSpec(bandwidth_rule="silverman")


def test_median_rule_resolves_against_particles():
    X = np.array([[0.0], [1.0], [3.0]])
    # squared distances 1, 9, 4
    assert median_sqdist(X) == 4.0
    spec = KernelSpec(bandwidth_rule="median").resolve(X)
    assert spec.bandwidth_rule == "fixed" and spec.bandwidth == 4.0
    with pytest.raises(ValueError, match="needs a particle set"):
        KernelSpec(bandwidth_rule="median").bandwidth_for(1)
    # coincident particles fall back to h = d
    assert KernelSpec(bandwidth_rule="median").resolve(np.zeros((3, 2))).bandwidth == 2.0
    assert KernelSpec().resolve(np.zeros((2, 5))).bandwidth == 5.0


def test_gram_matches_pointwise_kernel():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((6, 3))
    K, diff = rbf_gram(X, 3.0)
    spec = KernelSpec.fixed(3.0)
    for i in range(6):
        for j in range(6):
            assert K[i, j] == pytest.approx(kernel_eval(X[i], X[j], spec), rel=1e-14)
            np.testing.assert_array_equal(diff[i, j], X[i] - X[j])
    np.testing.assert_allclose(pairwise_sqdist(X), np.einsum("ijk,ijk->ij", diff, diff))


@settings(max_examples=25)
@given(st.floats(0.01, 100))
def test_resolved_bandwidth_positive(scale):
    X = np.random.default_rng(3).standard_normal((10, 2)) * scale
    for rule in ("dimension", "median"):
        assert KernelSpec(bandwidth_rule=rule).resolve(X).bandwidth > 0
