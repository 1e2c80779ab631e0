import numpy as np
import pytest

from difflab import fixtures
from difflab.flow import Interpolant, marginal_velocity_straightline, sample_path
from difflab.forward import posterior, posterior_mean_eps_form
from difflab.gaussian import Gaussian, kl
from difflab.nn import MLP, MLPSpec
from difflab.predictor import (
    AnalyticOracle,
    MLPPredictor,
    TrainConfig,
    VelocityModel,
    cfm_loss,
    eps_batch_maker,
    eps_loss_floor,
    fit_regression,
    mfm_loss,
    train_eps,
    vb_weight,
    vb_weights,
    velocity_batch_maker,
)
from difflab.schedule import default_schedule, make_constant, make_linear

S = default_schedule()


def test_vb_weight_examples():
    assert vb_weight(2, make_constant(2, 0.1)) == pytest.approx(0.1 / (2 * 0.9 * 0.1), rel=1e-14)
    # at fixed abar_{t-1} the weight scales like beta_t / (1 - beta_t)
    from difflab.schedule import Schedule

    a, b = vb_weight(2, Schedule([0.1, 0.2])), vb_weight(2, Schedule([0.1, 0.4]))
    assert b / a == pytest.approx((0.4 / 0.6) / (0.2 / 0.8), rel=1e-14)
    with pytest.raises(ValueError):
        vb_weight(1, S)
    w = vb_weights(S)
    assert w[2] == vb_weight(2, S) and np.all(w[2:] > 0)


def test_vb_weight_equals_kl(rng):
    for _ in range(100):
        t = int(rng.integers(2, 1001))
        x0, eps, eps_hat = rng.normal(size=(3, 2))
        xt = np.sqrt(S.alpha_bars[t]) * x0 + np.sqrt(S.one_minus_alpha_bars[t]) * eps
        q = posterior(xt, x0, t, S)
        k = kl(Gaussian(q.mean, q.var), Gaussian(posterior_mean_eps_form(xt, eps_hat, t, S), q.var))
        assert k == pytest.approx(vb_weight(t, S) * np.sum((eps - eps_hat) ** 2), rel=1e-10, abs=1e-14)


def test_views_are_consistent():
    rng = np.random.default_rng(1)
    net = MLP(MLPSpec(2, hidden=8, depth=2), seed=0)
    net.set_flat(net.get_flat() * 4)
    for p in (AnalyticOracle(fixtures.ring()), MLPPredictor(net, "eps"), MLPPredictor(net, "x0")):
        for t in (1, 40, 999):
            x = rng.normal(size=(10, 2))
            ab = S.alpha_bars[t]
            e = p.eps_hat(x, t, S)
            assert np.allclose(p.x0_hat(x, t, S), (x - np.sqrt(1 - ab) * e) / np.sqrt(ab), atol=1e-10)
            assert np.allclose(p.velocity_hat(x, t, S), -(x - e), atol=1e-10)


def test_oracle_conditioning():
    m = fixtures.two_modes()
    orc = AnalyticOracle(m)
    x = np.array([[0.3, 0.0], [-0.3, 0.0], [1.0, 1.0]])
    ab = 0.4
    mixed = orc.eps(x, ab, np.array([0, 1, -1]))
    assert np.allclose(mixed[0], orc.eps(x[:1], ab, 0)[0])
    assert np.allclose(mixed[1], orc.eps(x[1:2], ab, 1)[0])
    assert np.allclose(mixed[2], orc.eps(x[2:], ab)[0])
    with pytest.raises(ValueError):
        orc.eps(x, ab, 5)
    with pytest.raises(ValueError):
        orc.eps(x, 1.0)


def test_zero_step_training_is_identity():
    net = MLP(MLPSpec(2, hidden=8, depth=2), seed=4)
    pred, losses = train_eps(net, fixtures.standard_normal(), S, TrainConfig(steps=0))
    assert np.array_equal(pred.model.get_flat(), net.get_flat())
    assert losses == []


def test_training_loss_respects_floor():
    data, s = fixtures.two_modes(), make_linear(200, 1e-4, 0.05)
    cfg = TrainConfig(steps=600, batch_size=1024, time_law="uniform", log_every=1, seed=3)
    _, losses = train_eps(MLP(MLPSpec(2, hidden=32, depth=2), seed=0), data, s, cfg)
    floor = eps_loss_floor(data, s, seed=0)
    tail = np.array([v for _, v in losses[-200:]])
    # per-sample loss is the squared norm summed over coordinates
    assert tail.mean() > floor - 3 * tail.std() / np.sqrt(tail.size)
    assert tail.mean() < losses[0][1]


def test_condition_dropout_rates():
    data = fixtures.two_modes()
    make = eps_batch_maker(data, S, TrainConfig(p_drop=0.25), conditional=True)
    b = make(np.random.default_rng(0), 40_000)
    assert abs(np.mean(b.cond < 0) - 0.25) < 0.01
    assert set(np.unique(b.cond)) == {-1, 0, 1}
    assert make(np.random.default_rng(0), 10).cond is not None
    assert eps_batch_maker(data, S, TrainConfig(), conditional=False)(np.random.default_rng(0), 10).cond is None


def test_vb_weighting_requires_uniform_time_law():
    with pytest.raises(ValueError):
        eps_batch_maker(fixtures.two_modes(), S, TrainConfig(weighting="vb", time_law="logsnr"), False)
    b = eps_batch_maker(fixtures.two_modes(), S, TrainConfig(weighting="vb", time_law="uniform"), False)(np.random.default_rng(0), 100)
    assert np.all(b.weight > 0)


@pytest.mark.parametrize("kw", [dict(steps=-1), dict(lr=0.0), dict(weighting="x"), dict(time_law="x"), dict(p_drop=2.0), dict(ema_decay=1.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_cfm_zero_on_degenerate_coupling():
    interp = Interpolant("linear")
    batch = sample_path(fixtures.two_modes(), interp, np.linspace(0.05, 0.95, 50), np.random.default_rng(0), n=50, couple="degenerate")
    assert cfm_loss(lambda z, t: np.zeros_like(z), interp, batch) == 0.0


def test_cfm_minus_mfm_is_the_variance_floor():
    data, interp = fixtures.standard_normal(), Interpolant("linear")
    batch = sample_path(data, interp, np.random.default_rng(1).uniform(0, 0.9, 100_000), np.random.default_rng(2), n=100_000)
    exact = lambda z, t: marginal_velocity_straightline(data, interp, t, z)
    floor = cfm_loss(exact, interp, batch)
    assert mfm_loss(exact, interp, data, batch) == 0.0
    zero = lambda z, t: np.zeros_like(z)
    gap = cfm_loss(zero, interp, batch) - mfm_loss(zero, interp, data, batch)
    assert gap == pytest.approx(floor, rel=0.02)


def test_time_weighting_leaves_the_minimiser_unchanged():
    """Fits with w(t) = 1 and w(t) = t agree with each other and with the analytic velocity."""
    data, interp = fixtures.standard_normal(), Interpolant("linear")
    cfg = TrainConfig(steps=1500, batch_size=1024, lr=3e-3, lr_final=1e-4, seed=0)
    fits = []
    for w in (None, lambda t: t + 0.05):
        res = fit_regression(MLP(MLPSpec(2, hidden=64, depth=2), seed=1), velocity_batch_maker(data, interp, (0.0, 0.9), w), cfg)
        fits.append(VelocityModel(res.model))
    g = np.linspace(-1.5, 1.5, 7)
    X = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    for t in (0.2, 0.5, 0.8):
        tt = np.full(len(X), t)
        exact = marginal_velocity_straightline(data, interp, tt, X)
        a, b = fits[0](X, tt), fits[1](X, tt)
        assert np.max(np.abs(a - b)) < 0.15
        assert np.max(np.abs(a - exact)) < 0.15
