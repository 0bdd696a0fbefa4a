"""Loss values at known points, gradient checks, and algebraic properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffnet.losses import (
    LossConfig,
    channel_wise_loss,
    evaluate_pair_loss,
    ff_loss,
    margin_loss,
    sigmoid,
    softplus,
    symba_loss,
)
from ffnet.tensor import ConfigError

from oracles import numerical_grad, rel_err

RNG = np.random.default_rng


def grad_check_pair(loss_fn, g_pos, g_neg, tol=1e-3):
    out = loss_fn(g_pos, g_neg)
    num_pos = numerical_grad(lambda v: loss_fn(v, g_neg).value, g_pos)
    num_neg = numerical_grad(lambda v: loss_fn(g_pos, v).value, g_neg)
    assert rel_err(out.grad_g_pos, num_pos) < tol
    assert rel_err(out.grad_g_neg, num_neg) < tol


class TestStableHelpers:
    def test_softplus_extremes(self):
        assert softplus(np.array([1e4]))[0] == pytest.approx(1e4)
        assert softplus(np.array([-1e4]))[0] == 0.0
        assert softplus(np.array([0.0]))[0] == pytest.approx(math.log(2.0))

    def test_sigmoid_extremes(self):
        s = sigmoid(np.array([-1e4, 0.0, 1e4]))
        assert s[0] == 0.0 and s[1] == 0.5 and s[2] == 1.0


class TestFFLoss:
    def test_at_threshold_two_ln_two(self):
        g = np.full(5, 2.0)
        out = ff_loss(g, g, theta=2.0)
        assert out.value == pytest.approx(2.0 * math.log(2.0), abs=1e-6)

    def test_saturated_correct_side(self):
        out = ff_loss(np.array([50.0]), np.array([-50.0]), theta=2.0)
        assert out.value < 1e-20

    def test_no_overflow_large_args(self):
        out = ff_loss(np.array([-1e4]), np.array([1e4]), theta=2.0)
        assert np.isfinite(out.value)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = RNG(seed)
        g_pos = rng.uniform(0, 4, 6)
        g_neg = rng.uniform(0, 4, 6)
        grad_check_pair(lambda p, n: ff_loss(p, n, theta=2.0), g_pos, g_neg)

    def test_translation_coupling(self):
        rng = RNG(1)
        g_pos = rng.uniform(0, 4, 8)
        g_neg = rng.uniform(0, 4, 8)
        a = ff_loss(g_pos, g_neg, theta=2.0).value
        b = ff_loss(g_pos + 1.7, g_neg + 1.7, theta=2.0 + 1.7).value
        assert a == pytest.approx(b, abs=1e-6)


class TestSymbaLoss:
    def test_equal_goodness_ln_two(self):
        g = np.full(3, 1.5)
        assert symba_loss(g, g).value == pytest.approx(math.log(2.0), abs=1e-9)

    def test_saturation_default_orientation(self):
        out = symba_loss(np.array([51.0]), np.array([1.0]))
        assert out.value < 1e-20

    def test_printed_sign_flips_argument(self):
        g_pos, g_neg = np.array([3.0]), np.array([1.0])
        default = symba_loss(g_pos, g_neg)
        printed = symba_loss(g_pos, g_neg, printed_sign=True)
        assert default.value == pytest.approx(float(softplus(np.array([-2.0]))[0]))
        assert printed.value == pytest.approx(float(softplus(np.array([2.0]))[0]))

    @pytest.mark.parametrize("printed", [False, True])
    def test_gradients(self, printed):
        rng = RNG(2)
        grad_check_pair(lambda p, n: symba_loss(p, n, printed_sign=printed),
                        rng.uniform(0, 4, 5), rng.uniform(0, 4, 5))


class TestMarginLoss:
    def test_kink_boundary_value(self):
        g_neg = np.array([1.0])
        g_pos = g_neg + 1.0  # exactly m above
        out = margin_loss(g_pos, g_neg, m=1.0, lam=0.0)
        assert out.value == 0.0
        assert out.grad_g_pos[0] == 0.0  # subgradient at the kink is 0

    def test_zero_when_well_separated(self):
        out = margin_loss(np.array([10.0]), np.array([1.0]), m=1.0, lam=0.0)
        assert out.value == 0.0

    @pytest.mark.parametrize("printed", [False, True])
    def test_gradients_away_from_kink(self, printed):
        rng = RNG(3)
        g_pos = rng.uniform(0, 4, 6)
        g_neg = rng.uniform(0, 4, 6)
        # nudge anything within FD reach of the hinge
        gap = g_pos - g_neg
        m = 1.0
        near = np.abs(np.abs(gap) - m) < 0.05
        g_pos[near] += 0.2
        grad_check_pair(lambda p, n: margin_loss(p, n, m=m, lam=0.03,
                                                 printed_sign=printed), g_pos, g_neg)


class TestChannelWiseLoss:
    def test_uniform_rows_ln_j(self):
        j = 10
        g = np.full((4, j), 0.37)
        z = np.eye(j)[[0, 3, 5, 9]]
        out = channel_wise_loss(g, z)
        assert out.value == pytest.approx(math.log(j), abs=1e-6)

    def test_saturated_target(self):
        g = np.zeros((1, 10))
        g[0, 4] = 50.0
        z = np.eye(10)[[4]]
        assert channel_wise_loss(g, z).value < 1e-20

    def test_grad_rows_sum_to_zero(self):
        rng = RNG(4)
        g = rng.uniform(0, 3, (8, 10))
        z = np.eye(10)[rng.integers(0, 10, 8)]
        out = channel_wise_loss(g, z)
        assert np.max(np.abs(out.grad_goodness.sum(axis=1))) < 1e-7

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = RNG(seed)
        g = rng.uniform(0, 3, (4, 6))
        z = np.eye(6)[rng.integers(0, 6, 4)]
        out = channel_wise_loss(g, z)
        num = numerical_grad(lambda v: channel_wise_loss(v, z).value, g)
        assert rel_err(out.grad_goodness, num) < 1e-3

    def test_shift_invariance(self):
        rng = RNG(5)
        g = rng.uniform(0, 3, (4, 10))
        z = np.eye(10)[rng.integers(0, 10, 4)]
        a = channel_wise_loss(g, z).value
        b = channel_wise_loss(g + rng.uniform(-5, 5, (4, 1)), z).value
        assert a == pytest.approx(b, abs=1e-6)

    def test_stable_at_large_scores(self):
        g = np.array([[1e4, 0.0, 0.0]])
        z = np.array([[1.0, 0.0, 0.0]])
        assert np.isfinite(channel_wise_loss(g, z).value)


class TestLossConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.kind == "ff_original" and cfg.theta == 2.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            LossConfig(kind="nope")
        with pytest.raises(ConfigError):
            LossConfig(theta=0.0)
        with pytest.raises(ConfigError):
            LossConfig(lam=-1.0)

    def test_dispatch(self):
        g = np.array([2.0]), np.array([2.0])
        assert evaluate_pair_loss(LossConfig(kind="ff_original"), *g).value > 0
        assert evaluate_pair_loss(LossConfig(kind="symba"), *g).value > 0
        assert evaluate_pair_loss(LossConfig(kind="margin"), *g).value > 0
        with pytest.raises(ConfigError):
            evaluate_pair_loss(LossConfig(kind="channel_wise"), *g)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 20), min_size=1, max_size=8),
       st.lists(st.floats(0, 20), min_size=1, max_size=8))
def test_losses_nonnegative(pos_vals, neg_vals):
    n = min(len(pos_vals), len(neg_vals))
    g_pos = np.array(pos_vals[:n])
    g_neg = np.array(neg_vals[:n])
    assert ff_loss(g_pos, g_neg, theta=2.0).value >= 0
    assert symba_loss(g_pos, g_neg).value >= 0
    assert margin_loss(g_pos, g_neg, m=1.0, lam=0.03).value >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 5.0))
def test_raising_g_pos_never_increases_default_losses(seed, delta):
    rng = RNG(seed)
    g_pos = rng.uniform(0, 5, 4)
    g_neg = rng.uniform(0, 5, 4)
    for fn in (lambda p: ff_loss(p, g_neg, theta=2.0).value,
               lambda p: symba_loss(p, g_neg).value,
               lambda p: margin_loss(p, g_neg, m=1.0, lam=0.03).value):
        assert fn(g_pos + delta) <= fn(g_pos) + 1e-12

    j = 6
    g = rng.uniform(0, 3, (4, j))
    y = rng.integers(0, j, 4)
    z = np.eye(j)[y]
    bumped = g.copy()
    bumped[np.arange(4), y] += delta
    assert channel_wise_loss(bumped, z).value <= channel_wise_loss(g, z).value + 1e-12


def test_batch_mean_equals_mean_of_per_sample_losses():
    rng = RNG(6)
    g_pos = rng.uniform(0, 4, 10)
    g_neg = rng.uniform(0, 4, 10)
    whole = ff_loss(g_pos, g_neg, theta=2.0).value
    singles = [ff_loss(g_pos[i:i + 1], g_neg[i:i + 1], theta=2.0).value for i in range(10)]
    assert whole == pytest.approx(np.mean(singles), rel=1e-9)
    # gradient linearity: per-sample gradients scale as 1/N
    whole_grad = ff_loss(g_pos, g_neg, theta=2.0).grad_g_pos
    single_grads = [ff_loss(g_pos[i:i + 1], g_neg[i:i + 1], theta=2.0).grad_g_pos[0]
                    for i in range(10)]
    np.testing.assert_allclose(whole_grad * 10, single_grads, rtol=1e-9)
