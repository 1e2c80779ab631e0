import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from difflab import fixtures
from difflab.latent import LinearCodec, latent_pipeline, random_orthonormal
from difflab.predictor import AnalyticOracle
from difflab.samplers import SamplerConfig, run_sampler
from difflab.schedule import make_linear

S = make_linear(100, 1e-4, 0.05)


def test_codec_validation():
    with pytest.raises(ValueError):
        LinearCodec(np.ones((3, 2)))
    with pytest.raises(ValueError):
        LinearCodec([[1.0, 1.0]])
    c = LinearCodec.identity(2)
    with pytest.raises(ValueError):
        c.encode(np.ones(3))
    with pytest.raises(ValueError):
        c.decode(np.ones(3))


@given(st.integers(1, 5), st.integers(0, 4), st.integers(0, 2**31))
def test_random_codec_round_trip(k, extra, seed):
    E = random_orthonormal(k, k + extra, seed)
    c = LinearCodec(E)
    z = np.random.default_rng(seed).normal(size=(7, k))
    assert np.allclose(c.encode(c.decode(z)), z, atol=1e-12)
    assert np.max(c.span_residual(c.decode(z))) < 1e-12
    assert LinearCodec.from_json(__import__("json").dumps(c.to_dict())).E.tolist() == c.E.tolist()


def test_identity_codec_is_bit_identical():
    cfg = SamplerConfig(kind="ddim", n_steps=20, sigma_mode="eta", eta=0.5, seed=3, record="final")
    orc = AnalyticOracle(fixtures.two_modes())
    decoded, _ = latent_pipeline(LinearCodec.identity(2), cfg, orc, S, 500)
    direct = run_sampler(cfg, orc, S, 500, dim=2).final
    assert np.array_equal(decoded, direct)


def test_decoded_samples_lie_in_span():
    E = random_orthonormal(1, 3, 0)
    codec = LinearCodec(E)
    orc = AnalyticOracle(fixtures.standard_normal(1))
    out, run = latent_pipeline(codec, SamplerConfig(kind="ddim", n_steps=10, record="final"), orc, S, 100)
    assert out.shape == (100, 3) and run.final.shape == (100, 1)
    assert np.max(codec.span_residual(out)) < 1e-12
