import math

import numpy as np
import pytest

from aeskd import ratings


class TestFromVotes:
    def test_delta(self):
        d = ratings.from_votes([0] * 9 + [10])
        np.testing.assert_allclose(d, [0] * 9 + [1.0])

    def test_uniform(self):
        d = ratings.from_votes([1] * 10)
        np.testing.assert_allclose(d, np.full(10, 0.1))

    def test_normalization(self):
        d = ratings.from_votes([2, 0, 0, 0, 0, 0, 0, 0, 0, 8])
        np.testing.assert_allclose(d, [0.2] + [0.0] * 8 + [0.8])

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            ratings.from_votes([0] * 10)

    def test_mean_score_matches_weighted_counts(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            counts = rng.integers(0, 20, size=10)
            if counts.sum() == 0:
                counts[rng.integers(0, 10)] = 1
            d = ratings.from_votes(counts)
            expected = (np.arange(1, 11) * counts).sum() / counts.sum()
            assert ratings.mean_score(d) == pytest.approx(expected, abs=1e-12)


class TestMeanScore:
    def test_uniform(self):
        assert ratings.mean_score(np.full(10, 0.1)) == pytest.approx(5.5)

    def test_delta(self):
        d = np.zeros(10)
        d[6] = 1.0
        assert ratings.mean_score(d) == pytest.approx(7.0)

    def test_two_point(self):
        d = np.zeros(10)
        d[3], d[5] = 0.2, 0.8
        assert ratings.mean_score(d) == pytest.approx(0.2 * 4 + 0.8 * 6)


class TestBinarize:
    def test_above(self):
        assert ratings.binarize(5.5) == "high"

    def test_at_threshold_is_low(self):
        assert ratings.binarize(5.0) == "low"

    def test_bottom(self):
        assert ratings.binarize(1.0) == "low"

    def test_invariant_under_tiny_noise(self):
        d = np.full(10, 0.1)
        noisy = d * (1 + 1e-10)
        assert ratings.binarize(ratings.mean_score(d)) == ratings.binarize(
            ratings.mean_score(noisy / noisy.sum())
        )


class TestCdf:
    def test_delta_at_one(self):
        d = np.zeros(10)
        d[0] = 1.0
        np.testing.assert_allclose(ratings.cdf(d), np.ones(10))

    def test_uniform(self):
        np.testing.assert_allclose(ratings.cdf(np.full(10, 0.1)), np.arange(1, 11) / 10)

    def test_prefix(self):
        d = np.zeros(6)
        d[0] = d[1] = 0.5
        np.testing.assert_allclose(ratings.cdf(d), [0.5, 1, 1, 1, 1, 1])

    def test_monotone_ends_at_one(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            d = ratings.from_votes(rng.integers(1, 50, size=10))
            c = ratings.cdf(d)
            assert (np.diff(c) >= -1e-12).all()
            assert c[-1] == pytest.approx(1.0, abs=1e-9)


class TestDiscretizedGaussian:
    def test_sigma_zero_limit_is_delta(self):
        d = ratings.discretized_gaussian(4.3, 1e-9, 10)
        expected = np.zeros(10)
        expected[3] = 1.0
        np.testing.assert_array_equal(d, expected)

    def test_symmetry_around_center(self):
        d = ratings.discretized_gaussian(5.5, 1.3, 10)
        np.testing.assert_allclose(d, d[::-1], atol=1e-12)

    def test_direct_formula(self):
        mu, sigma, n = 3.0, 1.0, 10
        w = [math.exp(-((k - mu) ** 2) / (2 * sigma**2)) for k in range(1, n + 1)]
        expected = np.array(w) / sum(w)
        np.testing.assert_allclose(ratings.discretized_gaussian(mu, sigma, n), expected, atol=1e-12)

    def test_non_positive_sigma_rejected(self):
        with pytest.raises(ValueError, match="sigma"):
            ratings.discretized_gaussian(5.0, 0.0)


class TestMeanMatchedGaussian:
    def test_tracks_target_across_range(self):
        for target in np.linspace(1.0, 10.0, 91):
            d = ratings.mean_matched_gaussian(target, 1.0, 10)
            ratings.validate_distribution(d)
            assert abs(ratings.mean_score(d) - target) <= 0.1

    def test_matches_plain_gaussian_mid_range(self):
        d = ratings.mean_matched_gaussian(5.5, 1.0, 10)
        plain = ratings.discretized_gaussian(5.5, 1.0, 10)
        np.testing.assert_allclose(d, plain, atol=1e-6)
