import numpy as np
import pytest
from scipy import stats

from epidrift import LatentPath, ValidationError, build_path, week_index
from epidrift.diffusion import week_of_day_map


class TestBuildPath:
    def test_zero_volatility_gives_constant_path(self):
        log_path, beta = build_path(x0=-1.2, z=np.random.default_rng(0).standard_normal(20), sigma=0.0)
        np.testing.assert_array_equal(log_path, np.full(21, -1.2))
        np.testing.assert_allclose(beta, np.exp(-1.2))

    def test_hand_worked_two_week_path(self):
        log_path, beta = build_path(0.0, [1.0, -1.0], 0.5)
        np.testing.assert_allclose(log_path, [0.0, 0.5, 0.0], atol=1e-15)
        np.testing.assert_allclose(beta, [1.0, np.exp(0.5), 1.0], rtol=1e-15)

    def test_increments_reconstruct(self):
        rng = np.random.default_rng(7)
        z = rng.standard_normal(40)
        log_path, _ = build_path(0.3, z, 0.8)
        np.testing.assert_allclose(np.diff(log_path), 0.8 * z, rtol=1e-12, atol=1e-14)

    def test_random_walk_variance(self):
        # var(x_K - x_0) should be K * sigma^2
        rng = np.random.default_rng(11)
        sigma, weeks, n = 0.3, 30, 100_000
        z = rng.standard_normal((n, weeks))
        displacement = sigma * z.sum(axis=1)
        expected = weeks * sigma**2
        assert abs(np.var(displacement) / expected - 1.0) < 0.03

    def test_negative_volatility_rejected(self):
        with pytest.raises(ValidationError):
            build_path(0.0, [0.1], -1e-3)


class TestWeekIndex:
    @pytest.mark.parametrize("t,expected", [(1, 1), (7, 1), (8, 2), (14, 2), (15, 3), (210, 30)])
    def test_known_values(self, t, expected):
        assert week_index(t, weeks=30) == expected

    @pytest.mark.parametrize("t", [0, -3, 211])
    def test_out_of_range(self, t):
        with pytest.raises(IndexError):
            week_index(t, weeks=30)

    def test_week_of_day_map_covers_every_week(self):
        mapping = week_of_day_map(6)
        assert mapping.shape == (42,)
        assert mapping[0] == 1 and mapping[-1] == 6
        assert np.all(np.diff(mapping) >= 0)
        counts = np.bincount(mapping)[1:]
        assert np.all(counts == 7)


class TestLatentPath:
    def test_beta_always_positive(self):
        rng = np.random.default_rng(5)
        path = LatentPath(
            x0=rng.normal(size=3) * 4,
            innovations=rng.standard_normal((3, 25)) * 3,
            volatilities=[0.1, 1.0, 2.5],
        )
        assert np.all(path.beta > 0)

    def test_noncentered_density_matches_centered_transitions(self):
        # log-density identity: sum of N(x_k; x_{k-1}, sigma^2) transition
        # densities equals the innovation density minus K*log(sigma)
        rng = np.random.default_rng(42)
        for _ in range(10):
            sigma = rng.uniform(0.05, 2.0)
            z = rng.standard_normal(12)
            log_path, _ = build_path(rng.normal(), z, sigma)
            centered = stats.norm.logpdf(log_path[1:], loc=log_path[:-1], scale=sigma).sum()
            noncentered = stats.norm.logpdf(z).sum() - z.size * np.log(sigma)
            assert centered == pytest.approx(noncentered, abs=1e-12)

    def test_path_count_mismatch_rejected(self):
        with pytest.raises(Exception):
            LatentPath(x0=[0.0, 1.0], innovations=np.zeros((3, 4)), volatilities=[1.0, 1.0, 1.0])

    def test_beta_by_day_holds_week_value(self):
        path = LatentPath(x0=[0.0], innovations=[[1.0, -2.0]], volatilities=[0.5])
        by_day = path.beta_by_day()
        assert by_day.shape == (1, 14)
        np.testing.assert_allclose(by_day[0, :7], path.beta[0, 1])
        np.testing.assert_allclose(by_day[0, 7:], path.beta[0, 2])
