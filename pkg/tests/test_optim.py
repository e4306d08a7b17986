import numpy as np
import pytest

from aeskd.autodiff import Tensor
from aeskd.optim import Adam, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS


def test_schedule_divides_by_ten_every_three_epochs():
    sched = LrSchedule(initial=3e-5, decay=0.1, interval=3)
    assert sched.rate_at(0) == pytest.approx(3e-5)
    assert sched.rate_at(2) == pytest.approx(3e-5)
    assert sched.rate_at(3) == pytest.approx(3e-6)
    assert sched.rate_at(5) == pytest.approx(3e-6)
    assert sched.rate_at(6) == pytest.approx(3e-7)


def test_zero_gradient_leaves_parameters_unchanged():
    p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    p.grad = np.zeros_like(p.data)
    opt = Adam([p], LrSchedule(initial=0.1))
    opt.step(epoch=0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_single_step_matches_hand_computed_update():
    # one Adam step, g = 1: m = 1-b1, v = 1-b2, corrected moments are both 1,
    # so the update is lr / (1 + eps)
    lr = 0.01
    p = Tensor(np.array(0.5, dtype=np.float64), requires_grad=True)
    p.grad = np.array(1.0)
    opt = Adam([p], LrSchedule(initial=lr))
    opt.step(epoch=0)
    m = (1 - ADAM_BETA1) * 1.0
    v = (1 - ADAM_BETA2) * 1.0
    expected = 0.5 - lr * (m / (1 - ADAM_BETA1)) / (
        np.sqrt(v / (1 - ADAM_BETA2)) + ADAM_EPS
    )
    assert float(p.data) == pytest.approx(expected, rel=1e-12)


def test_non_finite_gradient_rejected_state_unchanged():
    p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    opt = Adam([p], LrSchedule(initial=0.1))
    p.grad = np.array([1.0, 1.0], dtype=np.float32)
    opt.step(epoch=0)
    after_good = p.data.copy()
    m_after = [m.copy() for m in opt.m]
    p.grad = np.array([np.nan, 1.0], dtype=np.float32)
    with pytest.raises(FloatingPointError):
        opt.step(epoch=0)
    np.testing.assert_array_equal(p.data, after_good)
    np.testing.assert_array_equal(opt.m[0], m_after[0])
    assert opt.step_count == 1


def test_determinism_bit_identical_runs():
    def run():
        rng = np.random.default_rng(7)
        p = Tensor(rng.standard_normal(4).astype(np.float32), requires_grad=True)
        opt = Adam([p], LrSchedule(initial=1e-2))
        for step in range(20):
            p.grad = (p.data * 0.5 + rng.standard_normal(4)).astype(np.float32)
            opt.step(epoch=step // 5)
        return p.data.copy()

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()
