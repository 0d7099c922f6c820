import math

import numpy as np
import pytest

from vmdiff.diffusion import GaussianScoreOracle, NoiseSchedule, ZeroScore
from vmdiff.errors import NumericalError
from vmdiff.sampler import (
    SNR, SamplerConfig, corrector_step, predictor_step, reverse_sample, sample_prior,
)


class NaNScore:
    schedule = NoiseSchedule(n=10)

    def score(self, x, i):
        return np.full(np.shape(x), np.nan)

    def with_schedule(self, schedule):
        return self


class TestPredictor:
    def test_zero_score_zero_noise(self, rng):
        x = rng.random((8, 8, 12))
        np.testing.assert_array_equal(predictor_step(x, 5, ZeroScore(), np.zeros_like(x)), x)

    def test_moves_toward_mean(self, rng):
        m = rng.random((8, 8, 12))
        x = m + rng.standard_normal(m.shape)
        oracle = GaussianScoreOracle(m, 0.2, NoiseSchedule(n=50))
        out = predictor_step(x, 20, oracle, np.zeros_like(x))
        assert np.all(np.abs(out - m) < np.abs(x - m))

    def test_formula(self, rng):
        sched = NoiseSchedule(n=10)
        x, z = rng.random((4, 4, 12)), rng.standard_normal((4, 4, 12))
        oracle = GaussianScoreOracle(0.3, 0.5, sched)
        dvar = sched.sigmas[4] ** 2 - sched.sigmas[3] ** 2
        want = x + dvar * oracle.score(x, 4) + math.sqrt(dvar) * z
        np.testing.assert_allclose(predictor_step(x, 3, oracle, z), want, rtol=1e-13)

    @pytest.mark.parametrize("i", [-1, 9])
    def test_index_range(self, i):
        with pytest.raises(ValueError):
            predictor_step(np.zeros((2, 2, 12)), i, ZeroScore(NoiseSchedule(n=10)), np.zeros((2, 2, 12)))

    def test_non_finite(self):
        with pytest.raises(NumericalError):
            predictor_step(np.zeros((2, 2, 12)), 1, NaNScore(), np.zeros((2, 2, 12)))


class TestCorrector:
    def test_zero_score_noop(self, rng):
        x = rng.random((3, 8, 8, 12))
        out = corrector_step(x, 4, ZeroScore(), rng.standard_normal(x.shape))
        np.testing.assert_array_equal(out, x)

    def test_step_size_per_chain(self, rng):
        sched = NoiseSchedule(n=10)
        oracle = GaussianScoreOracle(0.0, 1.0, sched)
        x, z = rng.standard_normal((2, 4, 4, 12)), rng.standard_normal((2, 4, 4, 12))
        out = corrector_step(x, 3, oracle, z, snr=0.1)
        for c in range(2):
            s = oracle.score(x[c], 3)
            eps = 2 * (0.1 * np.linalg.norm(z[c]) / np.linalg.norm(s)) ** 2
            np.testing.assert_allclose(out[c], x[c] + eps * s + np.sqrt(2 * eps) * z[c], rtol=1e-12)

    def test_non_finite(self, rng):
        with pytest.raises(NumericalError):
            corrector_step(np.zeros((2, 2, 12)), 1, NaNScore(), rng.standard_normal((2, 2, 12)))

    def test_bad_snr(self):
        with pytest.raises(ValueError):
            corrector_step(np.zeros((2, 2, 12)), 1, ZeroScore(), np.zeros((2, 2, 12)), snr=0)

    def test_zero_noise_log_density_non_decreasing(self, rng):
        # with z = 0 the snr rule gives a zero step; the density can only stay put
        m = rng.random((8, 8, 12))
        oracle = GaussianScoreOracle(m, 0.1, NoiseSchedule(n=100))
        x = m + rng.standard_normal(m.shape)
        prev = oracle.log_density(x, 10)
        for _ in range(100):
            x = corrector_step(x, 10, oracle, np.zeros_like(x))
            cur = oracle.log_density(x, 10)
            assert cur >= prev
            prev = cur

    def test_langevin_stationary(self):
        rng = np.random.default_rng(5)
        sched = NoiseSchedule()
        i, s = 200, 0.1
        m = rng.random((8, 8, 12))
        oracle = GaussianScoreOracle(m, s, sched)
        target_std = math.sqrt(s**2 + sched.sigma_step(i) ** 2)
        x = m + 1.5 * target_std * rng.standard_normal((256, 8, 8, 12))
        for _ in range(500):
            x = corrector_step(x, i, oracle, rng.standard_normal(x.shape))
        assert np.abs(x.mean(axis=0) - m).max() < 0.05
        ratio = x.std(axis=0) / target_std
        assert np.all(np.abs(ratio - 1) < 0.2)


class TestPrior:
    def test_std(self, rng):
        draws = sample_prior((100_000,), NoiseSchedule(), rng)
        assert abs(draws.std() / 378.0 - 1) < 0.01
        assert abs(draws.mean()) < 3 * 378.0 / math.sqrt(draws.size)

    def test_seeded(self):
        a = sample_prior((4, 8, 8, 12), NoiseSchedule(), np.random.default_rng(1))
        b = sample_prior((4, 8, 8, 12), NoiseSchedule(), np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)


class TestReverse:
    def test_deterministic(self):
        oracle = GaussianScoreOracle(0.5, 0.1, NoiseSchedule(n=20))
        a = reverse_sample(oracle, (3, 8, 8, 12), SamplerConfig(seed=4))
        b = reverse_sample(oracle, (3, 8, 8, 12), SamplerConfig(seed=4))
        np.testing.assert_array_equal(a, b)

    def test_callback_order(self):
        seen = []
        reverse_sample(ZeroScore(NoiseSchedule(n=6)), (8, 8, 12), callback=lambda i, x: seen.append(i))
        assert seen == [4, 3, 2, 1, 0]

    def test_config_validation(self):
        assert SamplerConfig().snr == SNR == 0.075
        with pytest.raises(ValueError):
            SamplerConfig(corrector_steps=-1)
        with pytest.raises(ValueError):
            SamplerConfig(snr=-0.1)
