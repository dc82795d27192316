import numpy as np
import pytest

from betasvgd.target import (
    Dataset,
    EmptyDatasetError,
    GaussianMixture,
    LabelEncodingError,
    LogisticPosterior,
    NonNumericError,
    RaggedRowError,
    Target,
    accuracy,
    gaussian_mixture_score,
    load_dataset,
    logistic_score,
    synthesize_logistic_data,
    translate,
)


class Shifted(Target):
    """Same target with a constant added to the log density."""

    def __init__(self, base, c):
        self.base, self.c, self.dim = base, c, base.dim

    def _log_density(self, X, **kw):
        return self.base.log_density(X, **kw) + self.c

    def _score(self, X, rng=None, **kw):
        return self.base.score(X, rng=rng, **kw)


def fd_score(target, x, step=1e-5):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (target.log_density(x + e) - target.log_density(x - e)) / (2 * step)
    return g


def fig9_mixture():
    return GaussianMixture([0.4, 0.2, 0.4], [[2, 0], [4, 0], [3, -3]], 1.0)


def small_logistic(seed=0, n=40, d=3, **kw):
    data, _ = synthesize_logistic_data(d, n, seed=seed)
    return LogisticPosterior.from_dataset(data, **kw)


def test_gaussian_score_closed_form():
    g = GaussianMixture.gaussian([1.0, -2.0])
    np.testing.assert_array_equal(gaussian_mixture_score(np.array([1.0, -2.0]), g), [0.0, 0.0])
    x = np.array([0.3, 0.7])
    np.testing.assert_allclose(g.score(x), np.array([1.0, -2.0]) - x, atol=1e-15)


def test_mixture_score_matches_finite_difference_at_4():
    mix = GaussianMixture([0.4, 0.6], [[2.0], [6.0]], 1.0)
    x = np.array([4.0])
    np.testing.assert_allclose(gaussian_mixture_score(x, mix), fd_score(mix, x), atol=1e-6)


@pytest.mark.parametrize(
    "target",
    [
        GaussianMixture([0.4, 0.6], [[2.0], [6.0]], 1.0),
        fig9_mixture(),
        GaussianMixture([0.5, 0.5], [[0, 0, 0], [1, 2, 3]], [[1, 2, 0.5], [0.3, 1, 4]]),
        small_logistic(),
    ],
    ids=["mix1d", "mix2d", "anisotropic", "logistic"],
)
def test_score_is_gradient_of_log_density(target):
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = 2.0 * rng.standard_normal(target.dim)
        an = target.score(x)
        fd = fd_score(target, x)
        assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(an), 1.0)


def test_constant_shift_leaves_score_unchanged():
    base = fig9_mixture()
    shifted = Shifted(base, 123.4)
    X = np.random.default_rng(1).standard_normal((10, 2))
    np.testing.assert_allclose(shifted.log_density(X) - base.log_density(X), 123.4)
    np.testing.assert_array_equal(shifted.score(X), base.score(X))


def test_batch_and_single_point_agree():
    mix = fig9_mixture()
    X = np.random.default_rng(2).standard_normal((5, 2))
    batch = mix.score(X)
    for i in range(5):
        np.testing.assert_array_equal(mix.score(X[i]), batch[i])
    with pytest.raises(ValueError, match="dimension"):
        mix.score(np.zeros(3))


def test_mixture_moments_match_closed_form():
    mix = fig9_mixture()
    np.testing.assert_allclose(mix.mean(), [2.8, -1.2], atol=1e-12)
    np.testing.assert_allclose(mix.second_moment(), [9.4, 4.6], atol=1e-12)
    draws = mix.sample(200_000, np.random.default_rng(3))
    np.testing.assert_allclose(draws.mean(axis=0), [2.8, -1.2], atol=0.03)


def test_mixture_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        GaussianMixture([0.5, 0.6], [[0.0], [1.0]])
    with pytest.raises(ValueError, match="variances must be positive"):
        GaussianMixture([1.0], [[0.0]], 0.0)
    with pytest.raises(ValueError, match="weights but"):
        GaussianMixture([1.0], [[0.0], [1.0]])


def test_translated_target():
    mix = fig9_mixture()
    c = np.array([1.5, -0.5])
    moved = translate(mix, c)
    x = np.array([0.2, 0.9])
    np.testing.assert_array_equal(moved.score(x + c), mix.score(x + c - c))
    assert moved.log_density(x + c) == mix.log_density(x)


def test_prior_only_score_for_empty_dataset():
    post = LogisticPosterior(np.zeros((0, 3)), np.zeros(0), prior_precision=1.0)
    w = np.array([0.5, -1.0, 2.0])
    np.testing.assert_allclose(logistic_score(w, post), -w)


def test_single_point_logistic_score_matches_finite_difference():
    post = LogisticPosterior([[0.5, -1.0]], [1.0], prior_precision=0.3)
    w = np.array([0.2, 0.4])
    np.testing.assert_allclose(logistic_score(w, post), fd_score(post, w), atol=1e-6)


def test_full_size_minibatch_equals_full_batch():
    full = small_logistic(n=30)
    mb = small_logistic(n=30, minibatch=30)
    w = np.array([0.1, -0.2, 0.3])
    assert not mb.stochastic
    np.testing.assert_array_equal(mb.score(w, rng=np.random.default_rng(0)), full.score(w))


def test_disjoint_minibatches_average_to_full_score():
    post = small_logistic(n=40, minibatch=8)
    w = np.array([0.3, -0.7, 1.1])
    batches = np.array_split(np.random.default_rng(5).permutation(40), 5)
    mean = np.mean([post.score(w, batch=b) for b in batches], axis=0)
    full = small_logistic(n=40).score(w)
    np.testing.assert_allclose(mean, full, atol=1e-10)


def test_minibatched_score_needs_rng():
    post = small_logistic(minibatch=5)
    with pytest.raises(ValueError, match="rng"):
        post.score(np.zeros(3))


def test_logistic_validation():
    with pytest.raises(ValueError, match="labels"):
        LogisticPosterior([[1.0]], [0.0])
    with pytest.raises(ValueError, match="row count"):
        LogisticPosterior([[1.0], [2.0]], [1.0])
    with pytest.raises(ValueError, match="prior precision"):
        LogisticPosterior([[1.0]], [1.0], prior_precision=0)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_dataset_maps_01_labels(tmp_path):
    p = write(tmp_path, "1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,1\n")
    ds = load_dataset(p)
    assert ds.feature_count == 2 and len(ds) == 3
    np.testing.assert_array_equal(ds.labels, [-1, 1, 1])
    np.testing.assert_array_equal(ds.features[2], [5.0, 6.0])


def test_load_dataset_header_and_label_column(tmp_path):
    p = write(tmp_path, "label,a,b\n-1,1.5,2\n1,0,0.25\n")
    ds = load_dataset(p, label_col=0)
    np.testing.assert_array_equal(ds.labels, [-1, 1])
    np.testing.assert_array_equal(ds.features, [[1.5, 2.0], [0.0, 0.25]])


def test_load_dataset_errors(tmp_path):
    with pytest.raises(EmptyDatasetError, match="no rows"):
        load_dataset(write(tmp_path, "", "empty.csv"))
    with pytest.raises(NonNumericError, match="row 1") as info:
        load_dataset(write(tmp_path, "1,2,0\n3,abc,1\n", "bad.csv"))
    assert info.value.row == 1
    with pytest.raises(RaggedRowError):
        load_dataset(write(tmp_path, "1,2,0\n3,1\n", "ragged.csv"))
    with pytest.raises(LabelEncodingError):
        load_dataset(write(tmp_path, "1,2,0\n3,1,2\n", "labels.csv"))
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing.csv")


def test_standardize_and_split():
    data, _ = synthesize_logistic_data(4, 500, seed=3)
    z = data.standardized()
    np.testing.assert_allclose(z.features.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z.features.std(axis=0), 1, atol=1e-12)
    train, test = data.split(0.2, seed=0)
    assert len(train) == 400 and len(test) == 100
    again = data.split(0.2, seed=0)
    np.testing.assert_array_equal(again[1].features, test.features)


def test_synthetic_data_is_deterministic_and_balanced():
    a, wa = synthesize_logistic_data(5, 1000, seed=0)
    b, wb = synthesize_logistic_data(5, 1000, seed=0)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(wa, wb)
    frac = np.mean(a.labels == 1)
    assert 0.2 < frac < 0.8


def test_zero_weight_gives_fair_labels():
    data, _ = synthesize_logistic_data(1, 10_000, seed=0, true_weights=[0.0])
    assert abs(np.mean(data.labels == 1) - 0.5) < 0.05


def test_synthetic_sizes_validated():
    with pytest.raises(ValueError):
        synthesize_logistic_data(0, 10)


def test_accuracy_of_true_weights_beats_chance():
    data, w = synthesize_logistic_data(5, 2000, seed=1)
    assert accuracy(w[None, :], data) > 0.7
    assert accuracy(-w[None, :], data) < 0.3


def test_dataset_rejects_bad_labels():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), np.array([1.0, 0.0]))
