import numpy as np
import pytest

from difflab.nn import EMA, MLP, Adam, MLPSpec, silu, silu_grad, time_features


def test_silu_grad_matches_finite_difference():
    z = np.linspace(-6, 6, 41)
    h = 1e-6
    assert np.allclose(silu_grad(z), (silu(z + h) - silu(z - h)) / (2 * h), atol=1e-8)


def test_time_features_shape_and_clip():
    f = time_features(np.array([-100.0, 0.0, 100.0]))
    assert f.shape == (3, 12)
    assert np.array_equal(f[0], time_features(np.array([-30.0]))[0])


def test_forward_shapes_and_null_label():
    net = MLP(MLPSpec(3, hidden=8, depth=2, n_labels=2, embed_dim=4), seed=0)
    x = np.ones((5, 3))
    ell = np.zeros(5)
    assert net.forward(x, ell).shape == (5, 3)
    assert np.array_equal(net.forward(x, ell, None), net.forward(x, ell, -1))
    assert not np.array_equal(net.forward(x, ell, 0), net.forward(x, ell, None))
    with pytest.raises(ValueError):
        net.forward(x, ell, 3)


@pytest.mark.parametrize("n_labels", [0, 3])
def test_backprop_matches_finite_differences(n_labels):
    rng = np.random.default_rng(0)
    net = MLP(MLPSpec(2, hidden=12, depth=3, n_labels=n_labels, embed_dim=5), seed=1)
    net.set_flat(net.get_flat() * 3.0)  # make the last layer non-negligible
    x, ell, target = rng.normal(size=(6, 2)), rng.uniform(-5, 5, 6), rng.normal(size=(6, 2))
    cond = np.array([0, 1, 2, -1, 0, 1]) if n_labels else None
    out, cache = net.forward(x, ell, cond, keep=True)
    grads = np.concatenate([g.ravel() for g in net.backward(cache, out - target)])
    flat = net.get_flat().copy()

    def loss(f):
        net.set_flat(f)
        return 0.5 * np.sum((net.forward(x, ell, cond) - target) ** 2)

    for i in rng.choice(flat.size, 25, replace=False):
        e = np.zeros_like(flat)
        e[i] = 1e-6
        fd = (loss(flat + e) - loss(flat - e)) / 2e-6
        assert fd == pytest.approx(grads[i], rel=1e-4, abs=1e-8)


def test_save_load_round_trip(tmp_path):
    net = MLP(MLPSpec(2, hidden=8, depth=2, n_labels=2), seed=3)
    net.save(tmp_path / "m.json")
    back = MLP.load(tmp_path / "m.json")
    assert np.array_equal(back.get_flat(), net.get_flat())
    x = np.ones((2, 2))
    assert np.array_equal(back.forward(x, np.zeros(2), 1), net.forward(x, np.zeros(2), 1))


def test_shape_validation():
    with pytest.raises(ValueError):
        MLP(MLPSpec(2, hidden=8, depth=2), params=[np.zeros((2, 2))])
    with pytest.raises(ValueError):
        MLP(MLPSpec(2, hidden=8, depth=2)).set_flat(np.zeros(3))


def test_adam_minimises_a_quadratic_and_ema_tracks():
    p = [np.array([5.0, -3.0])]
    opt, ema = Adam(p, lr=0.1), EMA(p, 0.9)
    for _ in range(500):
        opt.step([2 * p[0]])
        ema.update(p)
    assert np.max(np.abs(p[0])) < 1e-2
    assert np.max(np.abs(ema.shadow[0])) < 0.1
