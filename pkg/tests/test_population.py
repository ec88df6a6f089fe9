import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from dpbandit.population import (EXACT_PULL_LIMIT, PopulationSpec, average_local_reward,
                                 average_local_rewards, clipped_moments, observe_reward,
                                 sample_client_params, sample_clients, scalar_rewards,
                                 truncated_normal, truncated_variance_factor)
from dpbandit.rng import ZeroNoiseRNG, make_rng

THETA = np.array([0.6, 0.8, 0.0])


def spec(**kw):
    return PopulationSpec(THETA, **kw)


def test_population_validation():
    with pytest.raises(ValueError):
        PopulationSpec(np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        PopulationSpec(THETA, reward_noise=1.5)


def test_truncated_variance_factor_by_quadrature():
    mass = stats.norm.cdf(4) - stats.norm.cdf(-4)
    second, _ = integrate.quad(lambda z: z * z * stats.norm.pdf(z), -4, 4)
    assert truncated_variance_factor() == pytest.approx(second / mass, rel=1e-10)


def test_truncated_normal_bounds():
    z = truncated_normal(make_rng(0), 0.5, (100_000,))
    assert np.abs(z).max() <= 2.0
    assert z.var() == pytest.approx(0.25 * truncated_variance_factor(), rel=0.02)


class TestClients:
    def test_sigma_zero_is_exact(self):
        params = sample_client_params(5, spec(sigma=0.0), make_rng(0))
        np.testing.assert_array_equal(params, np.tile(THETA, (5, 1)))

    def test_mean(self):
        sigma = 0.1
        params = sample_client_params(10_000, spec(sigma=sigma), make_rng(1))
        tol = 3 * sigma / math.sqrt(3 * 10_000)
        assert np.all(np.abs(params.mean(axis=0) - THETA) < tol)

    def test_fresh_draws(self):
        rng = make_rng(2)
        a = sample_client_params(4, spec(), rng)
        b = sample_client_params(4, spec(), rng)
        assert not np.any(np.isclose(a, b).all(axis=1))

    def test_clients_objects(self):
        clients = sample_clients(3, spec(), make_rng(0))
        assert len(clients) == 3 and clients[0].theta_u.shape == (3,)

    def test_count_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_client_params(0, spec(), make_rng(0))


class TestRewards:
    x = np.array([1.0, 0.0, 0.0])

    def test_zero_noise(self):
        assert observe_reward(THETA, self.x, spec(), ZeroNoiseRNG()) == 0.6

    def test_clipping_counts(self):
        s = spec(B=1.0)
        theta_u = np.array([2.0, 0.0, 0.0])
        assert observe_reward(theta_u, self.x, s, ZeroNoiseRNG()) == 1.0
        assert s.clips.clipped == 1 and s.clips.total == 1

    def test_mean(self):
        rng = make_rng(3)
        s = spec(reward_noise=1.0, B=10.0)
        ys = [observe_reward(THETA, self.x, s, rng) for _ in range(10_000)]
        assert abs(np.mean(ys) - 0.6) < 3 / 100

    def test_action_norm(self):
        with pytest.raises(ValueError):
            observe_reward(THETA, np.array([1.0, 1.0, 0.0]), spec(), make_rng(0))

    @pytest.mark.parametrize("pulls", [1, 5, EXACT_PULL_LIMIT + 1, 10_000])
    def test_average_zero_noise(self, pulls):
        assert average_local_reward(THETA, self.x, pulls, spec(), ZeroNoiseRNG()) == pytest.approx(0.6)

    def test_average_single_pull_matches_observation(self):
        a = average_local_reward(THETA, self.x, 1, spec(), make_rng(5))
        b = observe_reward(THETA, self.x, spec(), make_rng(5))
        assert a == pytest.approx(b)

    def test_average_variance_shrinks(self):
        rng = make_rng(6)
        s = spec(reward_noise=0.5)
        v1 = np.var([average_local_reward(THETA, self.x, 4, s, rng) for _ in range(1000)])
        v2 = np.var([average_local_reward(THETA, self.x, 16, s, rng) for _ in range(1000)])
        assert v1 / v2 == pytest.approx(4.0, rel=0.25)

    def test_gaussian_limit_variance(self):
        rng = make_rng(7)
        s = spec(reward_noise=0.5)
        vals = average_local_rewards(np.tile(THETA, (4000, 1)), self.x[None], np.array([400]), s, rng)
        expected = 0.25 * truncated_variance_factor() / 400
        assert vals.var() == pytest.approx(expected, rel=0.1)
        assert vals.mean() == pytest.approx(0.6, abs=3 * math.sqrt(expected / 4000))

    def test_clipped_moments_match_simulation(self):
        rng = make_rng(8)
        m = np.array([1.7])
        y = np.clip(1.7 + truncated_normal(rng, 0.25, (400_000,)), -2, 2)
        mean, var, p = clipped_moments(m, 0.25, 2.0)
        assert mean[0] == pytest.approx(y.mean(), abs=1e-3)
        assert var[0] == pytest.approx(y.var(), rel=0.02)
        assert p[0] == pytest.approx(np.mean(y == 2.0), abs=3e-3)

    def test_edge_path_mean(self):
        rng = make_rng(9)
        theta_u = np.array([[1.9, 0.0, 0.0]])
        s = spec(reward_noise=0.25)
        vals = [average_local_rewards(theta_u, self.x[None], np.array([200]), s, rng)[0, 0] for _ in range(2000)]
        mean, var, _ = clipped_moments(np.array([1.9]), 0.25, 2.0)
        assert np.mean(vals) == pytest.approx(mean[0], abs=3 * math.sqrt(var[0] / 200 / 2000))
        assert s.clips.clipped > 0

    def test_scalar_rewards(self):
        s = spec()
        y = scalar_rewards(THETA, self.x, 500, s, make_rng(10))
        assert y.shape == (500,) and s.clips.total == 500

    def test_default_clip_rate_is_small(self):
        rng = make_rng(11)
        s = spec()
        theta_u = sample_client_params(2000, s, rng)
        actions = rng.normal(size=(10, 3))
        actions /= np.linalg.norm(actions, axis=1, keepdims=True)
        average_local_rewards(theta_u, actions, np.full(10, 8), s, rng)
        assert s.clips.rate < 0.01


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 300), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_rewards_always_bounded(seed, pulls, sigma, noise):
    rng = make_rng(seed)
    s = PopulationSpec(THETA, sigma=sigma, reward_noise=noise, B=1.0)
    theta_u = sample_client_params(5, s, rng) * 1.5
    actions = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    out = average_local_rewards(theta_u, actions, np.array([pulls, 1]), s, rng)
    assert np.all(np.abs(out) <= 1.0)
