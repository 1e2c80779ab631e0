"""Latent wrapper: a fixed orthonormal linear codec moves the whole pipeline
into a k-dimensional space and decodes at the end."""

from __future__ import annotations

import json

import numpy as np

from .gaussian import as_generator
from .samplers import SamplerConfig, SamplerRun, run_sampler
from .schedule import Schedule

ORTHO_TOL = 1e-10


class LinearCodec:
    """Encoder E (k x d, orthonormal rows) with decoder D = E^T."""

    def __init__(self, E):
        E = np.atleast_2d(np.asarray(E, dtype=float))
        k, d = E.shape
        if k > d:
            raise ValueError("latent dimension k must not exceed data dimension d")
        if np.max(np.abs(E @ E.T - np.eye(k))) > ORTHO_TOL:
            raise ValueError("encoder rows must be orthonormal")
        E.setflags(write=False)
        self.E = E

    @property
    def D(self) -> np.ndarray:
        return self.E.T

    @property
    def k(self) -> int:
        return self.E.shape[0]

    @property
    def d(self) -> int:
        return self.E.shape[1]

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"expected data dimension {self.d}, got {x.shape[-1]}")
        return x @ self.E.T

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.k:
            raise ValueError(f"expected latent dimension {self.k}, got {z.shape[-1]}")
        return z @ self.D.T

    def span_residual(self, x) -> np.ndarray:
        """Distance from each row of x to the decoder's column span."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.norm(x - self.decode(self.encode(x)), axis=1)

    def to_dict(self) -> dict:
        return {"E": self.E.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearCodec":
        return cls(d["E"])

    @classmethod
    def from_json(cls, text: str) -> "LinearCodec":
        return cls.from_dict(json.loads(text))

    @classmethod
    def identity(cls, d: int) -> "LinearCodec":
        return cls(np.eye(d))


def random_orthonormal(k: int, d: int, seed) -> np.ndarray:
    """k x d matrix with orthonormal rows from the QR factor of a Gaussian matrix."""
    q, r = np.linalg.qr(as_generator(seed).standard_normal((d, k)))
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity so the draw is well defined
    return q.T


def latent_pipeline(codec: LinearCodec, cfg: SamplerConfig, pred, sched: Schedule, n_chains: int, **kwargs) -> tuple[np.ndarray, SamplerRun]:
    """Run a sampler on z with a latent-space predictor, then decode z0.

    Returns ``(decoded samples, latent run)``.
    """
    run = run_sampler(cfg, pred, sched, n_chains, dim=codec.k, **kwargs)
    return codec.decode(run.final), run
