import numpy as np
import pytest

from ldmrec.diffusion import (
    build_schedule,
    q_sample,
    q_sample_batch,
    step_embedding,
    step_embedding_batch,
)
from ldmrec.errors import ConfigError


class TestSchedule:
    def test_default_endpoints_exact(self):
        s = build_schedule(1000, 0.1, 0.0001)
        assert s.one_minus_alpha_bar(1) == 1e-5
        assert s.one_minus_alpha_bar(1000) == 0.1

    def test_midpoint_of_linear_ramp(self):
        T, scale, amin = 101, 0.2, 0.001
        s = build_schedule(T, scale, amin)
        mid = (T + 1) // 2
        assert s.one_minus_alpha_bar(mid) == pytest.approx(scale * (amin + 1) / 2, rel=1e-12)

    def test_strictly_increasing_noise(self):
        s = build_schedule(1000, 0.1, 0.0001)
        one_minus = 1.0 - s.alpha_bar
        assert np.all(np.diff(one_minus) > 0)
        assert np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))

    def test_single_step_schedule(self):
        s = build_schedule(1, 0.1, 0.0001)
        assert s.one_minus_alpha_bar(1) == 1e-5

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            build_schedule(0, 0.1, 0.0001)
        with pytest.raises(ConfigError):
            build_schedule(10, 0.0, 0.0001)
        with pytest.raises(ConfigError):
            build_schedule(10, 0.1, 1.5)

    def test_step_range_checked(self):
        s = build_schedule(10, 0.1, 0.0001)
        with pytest.raises(IndexError):
            s.one_minus_alpha_bar(0)
        with pytest.raises(IndexError):
            s.one_minus_alpha_bar(11)


class TestQSample:
    def test_zero_noise_limit_is_identity(self):
        # force alpha_bar = 1 to check the deterministic path
        s = build_schedule(10, 0.1, 0.0001)
        object.__setattr__(s, "one_minus", np.zeros(10))
        x = np.array([0.0, 1.0, 1.0, 0.0])
        out = q_sample(x, 5, s, np.random.default_rng(0))
        assert np.array_equal(out, x)

    def test_variance_matches_schedule(self):
        s = build_schedule(1000, 0.1, 0.0001)
        rng = np.random.default_rng(42)
        t = 700
        draws = np.stack([q_sample(np.zeros(4), t, s, rng) for _ in range(100_000)])
        target = s.one_minus_alpha_bar(t)
        assert np.all(np.abs(draws.var(axis=0) - target) / target < 0.02)

    def test_mean_matches_schedule(self):
        s = build_schedule(1000, 0.1, 0.0001)
        rng = np.random.default_rng(43)
        x = np.array([1.0, 1.0, 0.0, 1.0])
        t = 500
        draws = np.stack([q_sample(x, t, s, rng) for _ in range(100_000)])
        sig, _ = s.signal_std(t)
        mean = draws.mean(axis=0)
        nonzero = x > 0
        assert np.all(np.abs(mean[nonzero] - sig * x[nonzero]) / (sig * x[nonzero]) < 0.02)

    def test_batch_variant_matches_moments(self):
        s = build_schedule(100, 0.1, 0.0001)
        rng = np.random.default_rng(44)
        x = np.ones((5000, 3))
        t = np.full(5000, 100)
        out = q_sample_batch(x, t, s, rng)
        sig, std = s.signal_std(100)
        assert abs(out.mean() - sig) < 0.01
        assert abs(out.std() - std) / std < 0.05

    def test_step_out_of_range(self):
        s = build_schedule(10, 0.1, 0.0001)
        with pytest.raises(IndexError):
            q_sample(np.zeros(3), 11, s, np.random.default_rng(0))


class TestStepEmbedding:
    def test_zero_step(self):
        e = step_embedding(0, 8)
        assert np.array_equal(e[0::2], np.zeros(4))
        assert np.array_equal(e[1::2], np.ones(4))

    def test_paper_width(self):
        assert step_embedding(3, 10).shape == (10,)

    def test_first_pair_scalar_values(self):
        e = step_embedding(1, 4)
        assert e[0] == pytest.approx(np.sin(1.0), abs=1e-12)
        assert e[1] == pytest.approx(np.cos(1.0), abs=1e-12)
        assert e[0] == pytest.approx(0.84147, abs=1e-5)
        assert e[1] == pytest.approx(0.54030, abs=1e-5)

    def test_range_bound(self):
        e = step_embedding_batch(np.arange(0, 500), 10)
        assert np.all(np.abs(e) <= 1.0)

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            step_embedding(1, 7)

    def test_injective_over_full_range(self):
        for d in (2, 10):
            emb = step_embedding_batch(np.arange(0, 1001), d)
            sq = (emb**2).sum(axis=1)
            d2 = sq[:, None] + sq[None, :] - 2.0 * emb @ emb.T
            np.fill_diagonal(d2, np.inf)
            assert np.sqrt(max(d2.min(), 0.0)) > 1e-6

    def test_batch_matches_scalar(self):
        batch = step_embedding_batch(np.array([0, 1, 17]), 6)
        for row, t in zip(batch, (0, 1, 17)):
            assert np.allclose(row, step_embedding(t, 6), atol=1e-15)
