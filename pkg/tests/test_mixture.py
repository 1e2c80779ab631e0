import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from difflab import fixtures
from difflab.forward import sample_noised
from difflab.gaussian import Seed
from difflab.mixture import GaussianMixture, class_posterior, log_pt, marginal_at, optimal_eps, optimal_x0, score
from difflab.schedule import default_schedule, make_constant

S = default_schedule()
points = st.lists(st.floats(-4, 4), min_size=2, max_size=2).map(np.array)
times = st.integers(1, 1000)


def test_json_round_trip():
    m = fixtures.ring()
    r = GaussianMixture.from_json(json.dumps(m.to_dict()))
    assert np.array_equal(r.means, m.means) and np.array_equal(r.labels, m.labels)


@pytest.mark.parametrize("kw", [dict(weights=[0.5, 0.4], means=[[0.0], [1.0]], vars=[1, 1]), dict(weights=[1.0], means=[[0.0]], vars=[0.0]), dict(weights=[0.5, 0.5], means=[[0.0]], vars=[1, 1])])
def test_validation(kw):
    with pytest.raises(ValueError):
        GaussianMixture(**kw)


def test_immutable():
    m = fixtures.two_modes()
    with pytest.raises(ValueError):
        m.means[0, 0] = 5.0


def test_marginal_at_examples():
    m = fixtures.two_modes()
    assert marginal_at(m, 0, S) is not None and np.allclose(marginal_at(m, 0, S).means, m.means)
    for t in (1, 300, 1000):
        assert marginal_at(fixtures.standard_normal(), t, S).vars[0] == pytest.approx(1.0, abs=1e-15)
    s = make_constant(2, 0.1)  # abar_2 = 0.81
    mt = marginal_at(m, 2, s)
    assert np.allclose(mt.means, 0.9 * m.means) and np.allclose(mt.vars, 0.81 * 0.25 + 0.19)


def test_marginal_at_against_monte_carlo():
    m, s = fixtures.two_modes(), make_constant(2, 0.1)
    n = 50_000
    x0 = m.sample(Seed(0), n)
    xt = np.array([sample_noised(x, 2, s, Seed(1, i)).x_t for i, x in enumerate(x0[:5000])])
    mt = marginal_at(m, 2, s)
    assert np.allclose(xt.mean(0), mt.mean(), atol=4 * np.sqrt(np.diag(mt.cov()).max() / 5000))
    assert np.allclose(np.cov(xt, rowvar=False), mt.cov(), atol=0.25)


@given(points, times)
def test_standard_normal_score_is_minus_x(x, t):
    m = fixtures.standard_normal()
    assert np.allclose(score(m, t, S, x), -x, atol=1e-13)
    assert np.allclose(optimal_eps(m, t, S, x), np.sqrt(S.one_minus_alpha_bars[t]) * x, atol=1e-13)


def test_symmetric_mixture_score_vanishes_at_origin():
    assert np.allclose(score(fixtures.two_modes(), 500, S, np.zeros(2)), 0.0, atol=1e-15)


@given(points, times)
def test_tweedie_forms_reconstruct_x(x, t):
    m = fixtures.ring()
    ab = S.alpha_bars[t]
    recon = np.sqrt(ab) * optimal_x0(m, t, S, x) + np.sqrt(1 - ab) * optimal_eps(m, t, S, x)
    assert np.allclose(recon, x, atol=1e-10)


def test_optimal_x0_point_mass_component():
    m = GaussianMixture([1.0], [[1.5, -0.5]], [1e-8])
    assert np.allclose(optimal_x0(m, 400, S, np.array([3.0, 3.0])), [1.5, -0.5], atol=1e-6)


@given(points, times)
def test_optimal_x0_conjugate_gaussian(x, t):
    mu, v = np.array([0.7, -1.1]), 0.6
    ab = S.alpha_bars[t]
    # posterior mean of x0 given x = sqrt(ab) x0 + sqrt(1 - ab) eps
    post = mu + v * np.sqrt(ab) / (ab * v + 1 - ab) * (x - np.sqrt(ab) * mu)
    assert np.allclose(optimal_x0(GaussianMixture([1.0], [mu], [v]), t, S, x), post, atol=1e-10)


def test_optimal_eps_against_importance_sampling():
    m = fixtures.two_modes()
    t, x = 300, np.array([0.8, 0.3])
    ab = S.alpha_bars[t]
    n = 400_000
    rng = np.random.default_rng(5)
    x0 = m.sample(rng, n)
    # p(x | x0) weights; eps is then determined by (x, x0)
    logw = -0.5 * np.sum((x - np.sqrt(ab) * x0) ** 2, 1) / (1 - ab)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    eps = (x - np.sqrt(ab) * x0) / np.sqrt(1 - ab)
    est = w @ eps
    se = np.sqrt(np.sum(w[:, None] ** 2 * (eps - est) ** 2, 0))
    assert np.all(np.abs(optimal_eps(m, t, S, x) - est) < 4 * se)


def test_log_pt_matches_component_sum():
    m = fixtures.two_modes()
    x = np.array([0.5, -0.2])
    ab = S.alpha_bars[200]
    dens = sum(w * np.exp(-0.5 * np.sum((x - np.sqrt(ab) * mu) ** 2) / (ab * v + 1 - ab)) / (2 * np.pi * (ab * v + 1 - ab)) for w, mu, v in zip(m.weights, m.means, m.vars))
    assert log_pt(m, 200, S, x) == pytest.approx(np.log(dens), rel=1e-13)


def test_class_posterior_examples():
    single = fixtures.standard_normal()
    probs, classes, grad = class_posterior(single, 100, S, np.array([0.3, 1.0]), y=0)
    assert np.allclose(probs, 1.0) and np.allclose(grad, 0.0)
    probs, classes = class_posterior(fixtures.two_modes(), 100, S, np.zeros(2))
    assert np.allclose(probs, 0.5)
    with pytest.raises(ValueError):
        class_posterior(fixtures.two_modes(), 100, S, np.zeros(2), y=7)


@given(points, st.integers(0, 1000), st.sampled_from([0, 1]))
def test_bayes_score_decomposition(x, t, y):
    m = fixtures.two_modes()
    _, _, g = class_posterior(m, t, S, x, y=y)
    assert np.allclose(score(m.conditional(y), t, S, x), score(m, t, S, x) + g, atol=1e-10)


def test_sample_components_and_labels():
    m = fixtures.ring()
    x, comp = m.sample(Seed(0), 8000, return_components=True)
    assert x.shape == (8000, 2)
    assert np.allclose(np.bincount(comp, minlength=8) / 8000, 1 / 8, atol=0.02)
