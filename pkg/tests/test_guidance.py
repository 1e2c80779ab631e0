import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from difflab import fixtures
from difflab.evaluation import mode_occupancy
from difflab.guidance import (
    AnalyticClassifier,
    CFGPredictor,
    ClassifierGuidedPredictor,
    GuidanceConfig,
    X0Wrapper,
    cfg_blend,
    cfg_shift_coefficient,
    classifier_guided_mean,
    distill,
    distill_loss,
    dynamic_threshold,
    guided_reverse_mean,
    lambda_schedule,
    lambda_schedule_ell,
    norm_rescale,
    teacher_trajectories,
)
from difflab.predictor import AnalyticOracle, TrainConfig
from difflab.samplers import SamplerConfig, run_sampler
from difflab.schedule import default_schedule, make_linear, subgrid

S = default_schedule()
B = fixtures.two_modes()
ORC = AnalyticOracle(B)
vecs = st.lists(st.floats(-5, 5), min_size=2, max_size=2).map(lambda v: np.array([v]))


def test_config_validation():
    for kw in (dict(mode="x"), dict(lam=-1.0), dict(a=0.0), dict(percentile=10.0), dict(rescale_eps=0.0)):
        with pytest.raises(ValueError):
            GuidanceConfig(**kw)


def test_blend_endpoints():
    u, c = np.array([[1.0, 2.0]]), np.array([[-3.0, 0.5]])
    assert np.array_equal(cfg_blend(u, c, 0.0), u)
    assert np.array_equal(cfg_blend(u, c, 1.0), c)
    assert np.allclose(cfg_blend(u, c, 2.0), 2 * c - u)
    with pytest.raises(ValueError):
        cfg_blend(u, c[0], 1.0)


@given(vecs, vecs, st.floats(0, 8), st.integers(1, 1000))
def test_mean_shift_is_linear_in_lambda(u, c, lam, t):
    base = guided_reverse_mean(u, t, u, S)
    guided = guided_reverse_mean(u, t, cfg_blend(u, c, lam), S)
    assert np.allclose(guided - base, cfg_shift_coefficient(t, S) * lam * (c - u), rtol=1e-9, atol=1e-9)


def test_classifier_mean_shift_zero_lambda():
    mu = np.array([[0.2, 0.3]])
    assert np.array_equal(classifier_guided_mean(mu, np.ones((1, 2)), 0.0, 0.5), mu)
    assert np.allclose(classifier_guided_mean(mu, np.ones((1, 2)), 2.0, 0.5), mu + 1.0)


def test_lambda_schedule_limits_and_monotonicity():
    assert lambda_schedule_ell(-np.inf, 3.0) == 0.0
    assert lambda_schedule_ell(np.inf, 3.0) == 3.0
    assert lambda_schedule_ell(0.0, 3.0, b=0.0) == pytest.approx(1.5)
    vals = [lambda_schedule(t, S) for t in range(1, 1001)]
    assert np.all(np.diff(vals) <= 0)  # strength grows toward the clean end
    with pytest.raises(ValueError):
        lambda_schedule_ell(0.0, a=-1.0)


@given(vecs, vecs)
def test_norm_rescale_bound(delta, eps_u):
    out = norm_rescale(delta, eps_u)
    assert np.linalg.norm(out) <= np.linalg.norm(eps_u) * (1 + 1e-12)


def test_dynamic_threshold_is_clamp_only():
    x0 = np.array([[0.1, 0.2, 0.3, 10.0]])
    out = dynamic_threshold(x0, percentile=75.0)
    s = np.percentile(np.abs(x0), 75.0)
    assert np.allclose(out, np.clip(x0, -s, s))
    small = np.array([[0.5, -0.4]])
    assert np.array_equal(dynamic_threshold(small, 100.0), small)


def test_cfg_predictor_endpoints(rng):
    x = rng.normal(size=(20, 2))
    ab = 0.3
    p0 = CFGPredictor(ORC, GuidanceConfig(mode="cfg", lam=0.0, label=1))
    p1 = CFGPredictor(ORC, GuidanceConfig(mode="cfg", lam=1.0, label=1))
    assert np.allclose(p0.eps(x, ab), ORC.eps(x, ab))
    assert np.allclose(p1.eps(x, ab), ORC.eps(x, ab, 1))


def test_cfg_equals_classifier_guidance_under_oracle(rng):
    # with exact scores, eps_c - eps_u is -sqrt(1 - abar) times the classifier gradient
    x = rng.normal(size=(50, 2)) * 2
    for ab in (0.05, 0.5, 0.95):
        for lam in (0.5, 3.0):
            g = GuidanceConfig(mode="cfg", lam=lam, label=0)
            a = CFGPredictor(ORC, g).eps(x, ab)
            b = ClassifierGuidedPredictor(ORC, AnalyticClassifier(B), g).eps(x, ab)
            assert np.allclose(a, b, atol=1e-10)


def test_classifier_log_prob_normalises(rng):
    clf = AnalyticClassifier(B)
    x = rng.normal(size=(10, 2))
    total = np.exp(clf.log_prob(x, 0.4, 0)) + np.exp(clf.log_prob(x, 0.4, 1))
    assert np.allclose(total, 1.0)


def test_guidance_concentrates_on_label():
    s = make_linear(200, 1e-4, 0.1)
    occ = []
    for lam in (0.0, 3.0):
        pred = CFGPredictor(ORC, GuidanceConfig(mode="cfg", lam=lam, label=1))
        run = run_sampler(SamplerConfig(kind="ddim", n_steps=50, seed=1, record="final"), pred, s, 4000, dim=2)
        occ.append(mode_occupancy(run.final, B)[1])
    assert abs(occ[0] - 0.5) < 0.05 and occ[1] > 0.95


def test_distill_loss_zero_for_teacher_copy():
    teacher = CFGPredictor(ORC, GuidanceConfig(mode="cfg", lam=2.0, label=1))
    pairs = teacher_trajectories(teacher, S, subgrid(S, n_steps=10), 64, 0, 2)
    copy = X0Wrapper(lambda x, ab: teacher.x0(x, ab))
    assert distill_loss(copy, teacher, S, pairs) < 1e-20
    assert distill_loss(ORC, teacher, S, pairs) > 1e-3


def test_teacher_trajectories_shape():
    grid = subgrid(S, n_steps=5)
    pairs = teacher_trajectories(ORC, S, grid, 8, 0, 2)
    assert [p[0] for p in pairs] == list(grid)
    assert all(p[1].shape == (8, 2) for p in pairs)


def test_distill_smoke():
    teacher = CFGPredictor(ORC, GuidanceConfig(mode="cfg", lam=2.0, label=1))
    student, losses = distill(teacher, S, subgrid(S, n_steps=5), 2, TrainConfig(steps=60, batch_size=128, log_every=20), pool_chains=256, refresh_every=30)
    assert student.param == "x0" and len(losses) >= 2
    assert losses[-1][1] < losses[0][1]
