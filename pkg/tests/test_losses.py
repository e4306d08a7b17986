"""Loss-value oracles and gradient checks for every training objective.

Expected values are either closed forms forced by the definitions or
hand-evaluated term-by-term sums computed with independent numpy code in
the test body.
"""

import numpy as np
import pytest

from aeskd import losses, ratings
from aeskd.autodiff import Tensor, check_gradients


def rand_dist(rng, n=10):
    return ratings.from_votes(rng.integers(1, 30, size=n))


def delta(i, n=10):
    d = np.zeros(n)
    d[i] = 1.0
    return d


def emd_reference(y, y_hat):
    cy, cyh = np.cumsum(y), np.cumsum(y_hat)
    return float(np.sqrt(np.mean((cy - cyh) ** 2)))


class TestEmdLoss:
    def test_identity_is_zero(self):
        d = np.full(10, 0.1)
        assert losses.emd_loss(d, d).item() == pytest.approx(0.0, abs=1e-12)

    def test_adjacent_deltas(self):
        out = losses.emd_loss(delta(0), delta(1))
        assert out.item() == pytest.approx(np.sqrt(0.1), abs=1e-7)

    def test_shifted_half_mass(self):
        y = np.zeros(10)
        y[0] = y[1] = 0.5
        y_hat = np.zeros(10)
        y_hat[1] = y_hat[2] = 0.5
        assert losses.emd_loss(y, y_hat).item() == pytest.approx(np.sqrt(0.05), abs=1e-9)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(5)
        n = 10
        bound = np.sqrt((n - 1) / n)
        for _ in range(200):
            a, b = rand_dist(rng), rand_dist(rng)
            ab = losses.emd_loss(a, b).item()
            ba = losses.emd_loss(b, a).item()
            assert ab == pytest.approx(ba, abs=1e-12)
            assert -1e-12 <= ab <= bound + 1e-9

    def test_zero_iff_equal(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            a, b = rand_dist(rng), rand_dist(rng)
            val = losses.emd_loss(a, b).item()
            if np.abs(a - b).max() < 1e-9:
                assert val < 1e-9
            else:
                assert val > 0

    def test_extreme_case_hits_bound(self):
        out = losses.emd_loss(delta(0), delta(9))
        assert out.item() == pytest.approx(np.sqrt(9 / 10), abs=1e-9)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            losses.emd_loss(np.full(10, 0.1), np.full(8, 0.125))

    def test_matches_reference_on_random_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            a, b = rand_dist(rng), rand_dist(rng)
            assert losses.emd_loss(a, b).item() == pytest.approx(
                emd_reference(a, b), abs=1e-9
            )


class TestKdLoss:
    def test_student_equals_teacher(self):
        rng = np.random.default_rng(8)
        d = rand_dist(rng)
        f = rng.standard_normal(16)
        assert losses.kd_loss(d, d, f, f).item() == pytest.approx(0.0, abs=1e-12)

    def test_constant_feature_offset(self):
        rng = np.random.default_rng(9)
        d = rand_dist(rng)
        f = rng.standard_normal(16)
        c = 0.37
        out = losses.kd_loss(d, d, f, f + c)
        assert out.item() == pytest.approx(c * c, abs=1e-9)

    def test_term_by_term_sum(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            dt, ds = rand_dist(rng), rand_dist(rng)
            ft, fs = rng.standard_normal(16), rng.standard_normal(16)
            expected = emd_reference(dt, ds) + float(np.mean((ft - fs) ** 2))
            assert losses.kd_loss(dt, ds, ft, fs).item() == pytest.approx(expected, abs=1e-9)

    def test_feature_width_mismatch_rejected(self):
        d = np.full(10, 0.1)
        with pytest.raises(ValueError, match="width"):
            losses.kd_loss(d, d, np.zeros(8), np.zeros(9))


class TestMixedVariants:
    def test_mixed_loss_collapses_to_kd_when_gt_is_teacher(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            dt, ds = rand_dist(rng), rand_dist(rng)
            ft, fs = rng.standard_normal(12), rng.standard_normal(12)
            mixed = losses.mixed_loss(dt, ds, dt, ft, fs).item()
            kd = losses.kd_loss(dt, ds, ft, fs).item()
            assert abs(mixed - kd) <= 1e-12

    def test_mixed_label_collapses_to_kd_when_gt_is_teacher(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            dt, ds = rand_dist(rng), rand_dist(rng)
            ft, fs = rng.standard_normal(12), rng.standard_normal(12)
            mixed = losses.mixed_label_loss(dt, ds, dt, ft, fs).item()
            kd = losses.kd_loss(dt, ds, ft, fs).item()
            assert abs(mixed - kd) <= 1e-12

    def test_all_equal_is_zero(self):
        d = np.full(10, 0.1)
        f = np.ones(6)
        assert losses.mixed_loss(d, d, d, f, f).item() == pytest.approx(0.0, abs=1e-12)

    def test_mixed_loss_term_by_term(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            dt, ds, gt = rand_dist(rng), rand_dist(rng), rand_dist(rng)
            ft, fs = rng.standard_normal(12), rng.standard_normal(12)
            expected = (
                0.5 * emd_reference(dt, ds)
                + 0.5 * emd_reference(gt, ds)
                + float(np.mean((ft - fs) ** 2))
            )
            assert losses.mixed_loss(dt, ds, gt, ft, fs).item() == pytest.approx(
                expected, abs=1e-9
            )

    def test_blend_of_deltas(self):
        blended = losses.blend_labels(delta(0), delta(2))
        expected = np.zeros(10)
        expected[0] = expected[2] = 0.5
        np.testing.assert_allclose(blended.data.reshape(-1), expected, atol=1e-12)

    def test_mixed_label_matches_hand_blended_target(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            dt, ds, gt = rand_dist(rng), rand_dist(rng), rand_dist(rng)
            ft, fs = rng.standard_normal(12), rng.standard_normal(12)
            target = 0.5 * gt + 0.5 * dt
            ratings.validate_distribution(target)
            expected = emd_reference(target, ds) + float(np.mean((ft - fs) ** 2))
            assert losses.mixed_label_loss(dt, ds, gt, ft, fs).item() == pytest.approx(
                expected, abs=1e-9
            )


class TestMultitaskLoss:
    def test_perfect_predictions_near_zero(self):
        d = np.full(10, 0.1)
        v = np.zeros(8)
        v[1] = v[5] = 1.0
        pred = np.clip(v, 1e-7, 1 - 1e-7)
        assert losses.multitask_loss(d, d, pred, v).item() < 1e-5

    def test_uninformative_semantic_prediction_gives_ln2(self):
        d = np.full(10, 0.1)
        v = np.zeros(8)
        v[0] = v[3] = 1.0
        out = losses.multitask_loss(d, d, np.full(8, 0.5), v)
        assert out.item() == pytest.approx(np.log(2), abs=1e-9)

    def test_term_by_term(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            da, ds = rand_dist(rng), rand_dist(rng)
            v = np.zeros(8)
            v[rng.integers(0, 4)] = 1.0
            v[rng.integers(4, 8)] = 1.0
            p = rng.uniform(0.01, 0.99, size=8)
            bce_ref = -np.mean(v * np.log(p) + (1 - v) * np.log(1 - p))
            expected = emd_reference(da, ds) + float(bce_ref)
            assert losses.multitask_loss(ds, da, p, v).item() == pytest.approx(
                expected, abs=1e-9
            )


class TestBinaryAndRegressionKd:
    def test_bce_kd_at_half(self):
        f = np.ones(4)
        out = losses.bce_kd_loss(np.array(0.5), np.array(0.5), f, f)
        assert out.item() == pytest.approx(np.log(2), abs=1e-9)

    def test_feature_offset_only(self):
        y = np.array(0.3)
        base = losses.bce_kd_loss(y, y, np.zeros(4), np.zeros(4)).item()
        shifted = losses.bce_kd_loss(y, y, np.zeros(4), np.full(4, 0.5)).item()
        assert shifted - base == pytest.approx(0.25, abs=1e-9)

    def test_bce_kd_term_by_term(self):
        rng = np.random.default_rng(16)
        for _ in range(50):
            yt, ys = rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)
            ft, fs = rng.standard_normal(6), rng.standard_normal(6)
            bce_ref = -(yt * np.log(ys) + (1 - yt) * np.log(1 - ys))
            expected = bce_ref + float(np.mean((ft - fs) ** 2))
            out = losses.bce_kd_loss(np.array(yt), np.array(ys), ft, fs)
            assert out.item() == pytest.approx(expected, abs=1e-9)

    def test_mse_kd_identical_is_zero(self):
        f = np.ones(4)
        assert losses.mse_kd_loss(np.array(5.0), np.array(5.0), f, f).item() == 0.0

    def test_mse_kd_half_point_score_gap(self):
        f = np.ones(4)
        out = losses.mse_kd_loss(np.array(5.0), np.array(5.5), f, f)
        assert out.item() == pytest.approx(0.25, abs=1e-9)

    def test_mse_kd_term_by_term(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            yt, ys = rng.normal(5, 2), rng.normal(5, 2)
            ft, fs = rng.standard_normal(6), rng.standard_normal(6)
            expected = (yt - ys) ** 2 + float(np.mean((ft - fs) ** 2))
            out = losses.mse_kd_loss(np.array(yt), np.array(ys), ft, fs)
            assert out.item() == pytest.approx(expected, abs=1e-9)


class TestLossGradients:
    """Autodiff vs the finite-difference oracle for every loss family."""

    def _dist_param(self, rng, n=10):
        # keep the free variable in logit space so perturbed entries stay a
        # valid distribution through softmax
        return Tensor(rng.standard_normal(n), requires_grad=True)

    @pytest.mark.parametrize("seed", range(10))
    def test_emd_gradient(self, seed):
        from aeskd import autodiff as ad

        rng = np.random.default_rng(seed)
        y = Tensor(rand_dist(rng))
        z = self._dist_param(rng)
        err = check_gradients(
            lambda: losses.emd_loss(y, ad.softmax(z)), [z], eps=1e-5
        )
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_kd_gradient(self, seed):
        from aeskd import autodiff as ad

        rng = np.random.default_rng(100 + seed)
        dt = Tensor(rand_dist(rng))
        ft = Tensor(rng.standard_normal(8))
        z = self._dist_param(rng)
        fs = Tensor(rng.standard_normal(8), requires_grad=True)
        err = check_gradients(
            lambda: losses.kd_loss(dt, ad.softmax(z), ft, fs), [z, fs], eps=1e-5
        )
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_mixed_gradients(self, seed):
        from aeskd import autodiff as ad

        rng = np.random.default_rng(200 + seed)
        dt, gt = Tensor(rand_dist(rng)), Tensor(rand_dist(rng))
        ft = Tensor(rng.standard_normal(8))
        z = self._dist_param(rng)
        fs = Tensor(rng.standard_normal(8), requires_grad=True)
        err = check_gradients(
            lambda: losses.mixed_loss(dt, ad.softmax(z), gt, ft, fs), [z, fs], eps=1e-5
        )
        assert err < 1e-4
        err = check_gradients(
            lambda: losses.mixed_label_loss(dt, ad.softmax(z), gt, ft, fs),
            [z, fs],
            eps=1e-5,
        )
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_multitask_gradient(self, seed):
        from aeskd import autodiff as ad

        rng = np.random.default_rng(300 + seed)
        gt = Tensor(rand_dist(rng))
        v = np.zeros(8)
        v[1] = v[6] = 1.0
        z = self._dist_param(rng)
        logits = Tensor(rng.standard_normal(8), requires_grad=True)
        err = check_gradients(
            lambda: losses.multitask_loss(ad.softmax(z), gt, ad.sigmoid(logits), Tensor(v)),
            [z, logits],
            eps=1e-5,
        )
        assert err < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_binary_and_regression_gradients(self, seed):
        from aeskd import autodiff as ad

        rng = np.random.default_rng(400 + seed)
        yt = Tensor(np.array(rng.uniform(0.1, 0.9)))
        logit = Tensor(np.array(rng.standard_normal()), requires_grad=True)
        ft = Tensor(rng.standard_normal(6))
        fs = Tensor(rng.standard_normal(6), requires_grad=True)
        err = check_gradients(
            lambda: losses.bce_kd_loss(yt, ad.sigmoid(logit), ft, fs),
            [logit, fs],
            eps=1e-5,
        )
        assert err < 1e-4
        score = Tensor(np.array(rng.normal(5, 1)), requires_grad=True)
        err = check_gradients(
            lambda: losses.mse_kd_loss(Tensor(np.array(5.2)), score, ft, fs),
            [score, fs],
            eps=1e-5,
        )
        assert err < 1e-4


class TestLossSpec:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            losses.LossSpec(kind="contrastive")

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            losses.LossSpec(kind="kd", feature_weight=-1.0)

    def test_mixed_blend_is_fixed(self):
        with pytest.raises(ValueError, match="1/2"):
            losses.LossSpec(kind="mixed_label", gt_weight=0.7)
