import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from respiro.diffusion import (
    DEFAULT_FAST_BETAS,
    NoiseSchedule,
    build_fast_schedule,
    iterate_forward,
    linear_schedule,
    p_sample_step,
    q_sample,
    sample_array,
    training_loss,
)
from respiro.errors import ArgumentError, ConfigError
from respiro.tensor import Tensor


def product_oracle(betas):
    out, acc = [], 1.0
    for b in betas:
        acc *= 1.0 - float(b)
        out.append(acc)
    return np.array(out)


class OracleModel:
    """Predicts the exact noise for a known clean signal ``x0``."""

    def __init__(self, x0, schedule):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.s = schedule

    def __call__(self, x_t, t_coord, mel):
        t = np.asarray(t_coord).astype(int)
        ab = self.s.alpha_bars[t - 1][:, None]
        eps = (x_t.data.astype(np.float64) - np.sqrt(ab) * self.x0) / np.sqrt(1.0 - ab)
        return Tensor(eps)


class ZeroModel:
    hop = 4

    def __call__(self, x_t, t_coord, mel):
        return Tensor(np.zeros(x_t.shape, dtype=np.float32))


@pytest.fixture
def schedule():
    return linear_schedule(50, 1e-4, 0.02)


class TestSchedule:
    def test_endpoints(self, schedule):
        assert schedule.betas[0] == 1e-4 and schedule.betas[-1] == pytest.approx(0.02, abs=1e-18)
        assert np.all(np.diff(schedule.betas) > 0)

    def test_alpha_bar_matches_product(self, schedule):
        np.testing.assert_allclose(schedule.alpha_bars, product_oracle(schedule.betas), rtol=0, atol=1e-12)
        assert schedule.alpha_bar(0) == 1.0

    def test_alpha_bar_at_T(self, schedule):
        # frozen from a 50-digit mpmath product
        assert schedule.alpha_bars[-1] == pytest.approx(0.6029515973297149, abs=1e-14)

    @pytest.mark.parametrize("args", [(0,), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            linear_schedule(*args)

    def test_round_trip_tensors(self, schedule):
        back = NoiseSchedule.from_tensors(schedule.to_tensors())
        np.testing.assert_allclose(back.betas, schedule.betas, rtol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 200), st.floats(1e-5, 0.01), st.floats(0.0, 0.5))
    def test_alpha_bar_decreasing(self, T, start, spread):
        s = linear_schedule(T, start, min(start + spread, 0.9))
        assert np.all(np.diff(s.alpha_bars) <= 0)
        np.testing.assert_allclose(s.alpha_bars, product_oracle(s.betas), atol=1e-12)


class TestForward:
    def test_t_one_example(self, schedule):
        x = q_sample(np.array([1.0]), 1, np.array([0.0]), schedule)
        assert x[0] == pytest.approx(math.sqrt(1 - 1e-4))

    def test_per_sample_steps(self, schedule):
        x0 = np.ones((3, 2))
        out = q_sample(x0, np.array([1, 25, 50]), np.zeros((3, 2)), schedule)
        np.testing.assert_allclose(out[:, 0], np.sqrt(schedule.alpha_bars[[0, 24, 49]]))

    def test_step_out_of_range(self, schedule):
        with pytest.raises(ArgumentError):
            q_sample(np.zeros(2), 51, np.zeros(2), schedule)
        with pytest.raises(ArgumentError):
            q_sample(np.zeros(2), 0, np.zeros(2), schedule)

    def test_noise_shape(self, schedule):
        with pytest.raises(ArgumentError):
            q_sample(np.zeros(3), 3, np.zeros(2), schedule)

    @pytest.mark.parametrize("t", [1, 10, 50])
    def test_closed_form_matches_chain(self, schedule, t):
        rng = np.random.default_rng(t)
        x0 = np.full(10_000, 0.7)
        chain = iterate_forward(x0, t, schedule, rng)
        closed = q_sample(x0, t, rng.standard_normal(x0.shape), schedule)
        assert chain.mean() == pytest.approx(closed.mean(), rel=0.05)
        assert chain.var() == pytest.approx(closed.var(), rel=0.05)


class TestReverse:
    def test_mean_matches_posterior(self, schedule):
        rng = np.random.default_rng(0)
        x0 = rng.uniform(-0.5, 0.5, (1, 8))
        t = 20
        x_t = q_sample(x0, t, rng.standard_normal(x0.shape), schedule)
        step = p_sample_step(OracleModel(x0, schedule), x_t, t, np.zeros((1, 1, 1)), schedule, np.zeros_like(x_t))
        ab, ab_prev = schedule.alpha_bars[t - 1], schedule.alpha_bars[t - 2]
        beta = schedule.betas[t - 1]
        posterior = (math.sqrt(ab_prev) * beta / (1 - ab)) * x0 + (
            math.sqrt(1 - beta) * (1 - ab_prev) / (1 - ab)
        ) * x_t
        np.testing.assert_allclose(step.mu, posterior, atol=1e-12)
        assert step.sigma**2 == pytest.approx((1 - ab_prev) / (1 - ab) * beta)

    def test_last_step_is_noiseless(self, schedule):
        step = p_sample_step(ZeroModel(), np.ones((1, 4)), 1, np.zeros((1, 1, 1)), schedule, None)
        assert step.sigma == 0.0
        np.testing.assert_array_equal(step.x_prev, step.mu)

    def test_oracle_sampling_recovers_signal(self, schedule):
        x0 = np.linspace(-0.5, 0.5, 12)[None]
        model = OracleModel(x0, schedule)
        model.hop = 12
        out = sample_array(model, np.zeros((1, 1, 3)), schedule, np.random.default_rng(0))
        np.testing.assert_allclose(out, x0, atol=1e-5)

    def test_sampling_is_seeded_and_clipped(self, schedule):
        mel = np.zeros((2, 4))
        a = sample_array(ZeroModel(), mel, schedule, np.random.default_rng(3))
        b = sample_array(ZeroModel(), mel, schedule, np.random.default_rng(3))
        assert a.shape == (8,) and a.dtype == np.float32
        np.testing.assert_array_equal(a, b)
        assert np.abs(a).max() <= 1.0

    def test_empty_mel_rejected(self, schedule):
        with pytest.raises(ArgumentError):
            sample_array(ZeroModel(), np.zeros((0, 4)), schedule, np.random.default_rng(0))


class TestTrainingLoss:
    def test_zero_model_loss_is_noise_power(self, schedule):
        rng = np.random.default_rng(0)
        loss = training_loss(ZeroModel(), np.zeros((64, 8)), np.zeros((64, 2, 1)), schedule, rng)
        assert float(loss.data) == pytest.approx(1.0, abs=0.05)

    def test_explicit_draw_is_reproducible(self, schedule):
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal((2, 8))
        noise = rng.standard_normal((2, 8))
        a = training_loss(ZeroModel(), x0, np.zeros((2, 2, 1)), schedule, t=[3, 7], noise=noise)
        np.testing.assert_allclose(float(a.data), np.mean(noise.astype(np.float32) ** 2), rtol=1e-6)

    def test_length_mismatch(self, schedule):
        with pytest.raises(ArgumentError):
            training_loss(ZeroModel(), np.zeros((1, 9)), np.zeros((1, 2, 1)), schedule, np.random.default_rng(0))


class TestFastSchedule:
    def test_training_prefix_aligns_to_integers(self, schedule):
        fast = build_fast_schedule(schedule, schedule.betas[:6])
        np.testing.assert_allclose(fast.aligned_steps, np.arange(1, 7), atol=1e-9)

    def test_default_ladder(self, schedule, caplog):
        with caplog.at_level(logging.WARNING):
            fast = build_fast_schedule(schedule, DEFAULT_FAST_BETAS)
        steps = fast.aligned_steps
        assert steps[0] == 1.0 and steps[-1] == 50.0
        assert np.all(np.diff(steps) > 0)
        assert "beyond the training range" in caplog.text
        # interior points sit on the training curve by linear interpolation
        target = np.cumprod(1 - np.asarray(DEFAULT_FAST_BETAS))
        for ab, coord in zip(target[1:-1], steps[1:-1]):
            k = int(coord)
            frac = coord - k
            lo, hi = schedule.alpha_bars[k - 1], schedule.alpha_bars[k]
            assert lo + frac * (hi - lo) == pytest.approx(ab, abs=1e-12)

    @pytest.mark.parametrize("betas", [[], [0.1, 0.05], [0.0, 0.1], [0.5, 1.0]])
    def test_invalid_ladders(self, schedule, betas):
        with pytest.raises(ConfigError):
            build_fast_schedule(schedule, betas)

    def test_too_many_steps(self):
        with pytest.raises(ConfigError):
            build_fast_schedule(linear_schedule(3), DEFAULT_FAST_BETAS)
