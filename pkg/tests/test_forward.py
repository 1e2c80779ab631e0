import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from difflab.forward import eps_from_noised, forward_step, marginal, posterior, posterior_mean_eps_form, sample_noised
from difflab.gaussian import Seed
from difflab.schedule import default_schedule, make_constant

S = default_schedule()
vecs = st.lists(st.floats(-3, 3), min_size=2, max_size=2).map(np.array)


def test_forward_step_zero_noise_limit():
    s = make_constant(2, 1e-12)
    x = np.array([0.3, -1.2])
    # the noise scale is sqrt(1e-12) = 1e-6, so allow six standard deviations
    assert np.max(np.abs(forward_step(x, 1, s, Seed(0)) - x)) < 6e-6


def test_forward_step_mean():
    s = make_constant(1, 0.19)  # alpha = 0.81
    x = forward_step(np.ones((100_000, 1)), 1, s, Seed(1))
    assert abs(x.mean() - 0.9) < 3 * np.sqrt(0.19 / 100_000)


def test_two_chained_steps_match_marginal():
    s = make_constant(2, 0.1)
    n = 100_000
    x = forward_step(forward_step(np.ones((n, 1)), 1, s, Seed(2, 0)), 2, s, Seed(2, 1))
    g = marginal(np.ones(1), 2, s)
    assert abs(x.mean() - g.mean[0]) < 4 * np.sqrt(g.var / n)
    assert abs(x.var() - g.var) < 4 * g.var * np.sqrt(2 / n)


def test_marginal_examples():
    g = marginal(np.array([1.0, 0.0]), 2, make_constant(2, 0.1))
    assert np.allclose(g.mean, [0.9, 0.0]) and g.var == pytest.approx(0.19)
    g0 = marginal(np.array([1.0, 2.0]), 0, S)
    assert np.array_equal(g0.mean, [1.0, 2.0]) and g0.var == 0.0


def test_sample_noised_limits():
    x0 = np.array([1.0, -1.0])
    near_clean = sample_noised(x0, 1, make_constant(3, 1e-10), Seed(3))
    assert np.allclose(near_clean.x_t, x0, atol=1e-4)
    n = 20_000
    xt = np.array([sample_noised(x0, 1000, S, Seed(4, i)).x_t for i in range(n)])
    assert stats.kstest(xt[:, 0], "norm").statistic < 0.015


@given(vecs, st.integers(1, 1000), st.integers(0, 2**31))
def test_eps_recovery(x0, t, seed):
    ns = sample_noised(x0, t, S, Seed(seed))
    assert np.allclose(eps_from_noised(ns.x_t, ns.x0, t, S), ns.eps, rtol=0, atol=1e-12 / max(S.one_minus_alpha_bars[t], 1e-3))


def test_posterior_endpoint_collapse():
    x0, xt = np.array([0.4, 0.1]), np.array([2.0, -3.0])
    p = posterior(xt, x0, 1, S)
    assert np.allclose(p.mean, x0, atol=1e-15) and p.var == 0.0


@given(vecs, st.integers(2, 1000))
def test_posterior_at_zero_noise_point(x0, t):
    xt = np.sqrt(S.alpha_bars[t]) * x0
    assert np.allclose(posterior(xt, x0, t, S).mean, np.sqrt(S.alpha_bars[t - 1]) * x0, atol=1e-12)


@given(vecs, vecs, st.integers(1, 1000))
def test_cross_form_agreement(x0, eps, t):
    xt = np.sqrt(S.alpha_bars[t]) * x0 + np.sqrt(S.one_minus_alpha_bars[t]) * eps
    assert np.allclose(posterior_mean_eps_form(xt, eps, t, S), posterior(xt, x0, t, S).mean, atol=1e-10)


def test_eps_form_limits():
    xt = np.array([1.0, 2.0])
    assert np.allclose(posterior_mean_eps_form(xt, np.zeros(2), 5, S), xt / np.sqrt(S.alphas[5]))
    tiny = make_constant(3, 1e-14)
    assert np.allclose(posterior_mean_eps_form(xt, np.ones(2), 2, tiny), xt, atol=1e-6)


def test_time_range_errors():
    with pytest.raises(ValueError):
        posterior(np.zeros(1), np.zeros(1), 0, S)
    with pytest.raises(ValueError):
        marginal(np.zeros(1), 1001, S)
