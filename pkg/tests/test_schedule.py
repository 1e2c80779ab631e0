import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from difflab.schedule import Schedule, default_schedule, make_constant, make_linear, subgrid

beta_lists = st.lists(st.floats(1e-6, 0.5), min_size=1, max_size=60).map(sorted)


def test_make_linear_examples():
    s = make_linear(1, 0.1, 0.1)
    assert s.T == 1 and np.allclose(s.betas[1:], [0.1]) and s.alpha_bars[1] == pytest.approx(0.9)
    s = default_schedule()
    assert s.T == 1000
    assert s.alpha_bars[-1] < 5e-5
    # frozen from a plain cumprod of 1 - linspace(1e-4, 0.02, 1000)
    assert s.alpha_bars[-1] == pytest.approx(4.035829765375676e-05, rel=1e-10)


def test_make_constant_examples():
    s = make_constant(2, 0.1)
    assert np.allclose(s.alpha_bars[1:], [0.9, 0.81])
    assert s.tilde_betas[2] == pytest.approx(0.1 / 0.19 * 0.1, rel=1e-14)
    assert make_constant(1, 0.5).tilde_betas[1] == 0.0
    assert make_constant(3, 0.1).snrs[3] == pytest.approx(0.729 / 0.271, rel=1e-13)


def test_index_zero_is_the_clean_sentinel():
    s = make_linear(5, 0.01, 0.1)
    assert s.alpha_bars[0] == 1.0 and s.one_minus_alpha_bars[0] == 0.0 and s.betas[0] == 0.0
    assert len(s.betas) == s.T + 1


@given(beta_lists)
def test_identities_hold_for_any_schedule(betas):
    s = Schedule(betas)
    ab, omab = s.alpha_bars, s.one_minus_alpha_bars
    assert np.allclose(ab[1:], ab[:-1] * s.alphas[1:], rtol=1e-15, atol=0)
    assert np.allclose(omab[1:], omab[:-1] + ab[:-1] * s.betas[1:], rtol=0, atol=1e-14)
    assert np.all(np.diff(ab) < 0)
    assert np.all((s.tilde_betas[1:] >= 0) & (s.tilde_betas[1:] <= s.betas[1:]))
    assert s.tilde_betas[1] == 0.0
    t = np.arange(2, s.T + 1)
    lhs = np.sqrt(s.alphas[t]) * omab[t - 1] / omab[t]
    rhs = np.sqrt((omab[t - 1] - s.tilde_betas[t]) / omab[t])
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


@pytest.mark.parametrize("betas", [[], [0.0], [1.0], [0.2, 0.1], [np.nan]])
def test_invalid_betas(betas):
    with pytest.raises(ValueError):
        Schedule(betas)


def test_json_round_trip_is_exact():
    s = make_linear(37, 1e-4, 0.3)
    r = Schedule.from_json(s.to_json())
    assert r == s and np.array_equal(r.betas, s.betas)


def test_check_t():
    s = make_constant(3, 0.1)
    assert s.check_t(3) == 3
    with pytest.raises(ValueError):
        s.check_t(4)
    with pytest.raises(ValueError):
        s.check_t(0, lo=1)


def test_continuous_bridge_matches_knots():
    s = make_linear(50, 1e-3, 0.2)
    u = np.arange(51) / 50
    assert np.allclose(s.alpha_bar_continuous(u), s.alpha_bars, rtol=1e-13)
    # derivative against central differences inside a cell
    v, h = 0.313, 1e-7
    fd = (s.alpha_bar_continuous(v + h) - s.alpha_bar_continuous(v - h)) / (2 * h)
    assert s.alpha_bar_dot(v) == pytest.approx(fd, rel=1e-6)


def test_subgrid_examples():
    assert subgrid(make_constant(4, 0.1)) == [4, 3, 2, 1]
    g = subgrid(default_schedule(), stride=100)
    assert len(g) == 11 and g[0] == 1000 and g[-1] == 1
    g = subgrid(default_schedule(), n_steps=20)
    assert len(g) == 20 and g[0] == 1000 and g[-1] == 1


def test_logsnr_grid_is_roughly_equidistant():
    s = default_schedule()
    g = subgrid(s, n_steps=25, spacing="logsnr")
    gaps = np.diff(s.log_snrs[g])
    assert np.all(gaps > 0)
    assert gaps.max() / gaps.min() < 1.5
    uniform_gaps = np.diff(s.log_snrs[subgrid(s, n_steps=25)])
    assert uniform_gaps.max() / uniform_gaps.min() > 5


@pytest.mark.parametrize("kw", [{"indices": [1000, 500]}, {"indices": [999, 1]}, {"indices": [1000, 500, 600, 1]}, {"stride": 0}, {"n_steps": 0}, {"n_steps": 10, "stride": 2}])
def test_subgrid_rejects_bad_grids(kw):
    with pytest.raises(ValueError):
        subgrid(default_schedule(), **kw)
