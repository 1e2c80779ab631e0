"""Exact Gaussian algebra for isotropic and diagonal covariances.

Everything is evaluated in the log domain; densities are only ever exposed as
``exp(log_density(...))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Seed:
    """Deterministic RNG key: identical ``(seed, stream)`` pairs give identical draws."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or not (0 <= self.stream < 2**64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, index: int) -> "Seed":
        # Streams are mixed so that (s, k) substreams of distinct parents do not collide.
        mixed = np.random.SeedSequence(self.stream, spawn_key=(index,)).generate_state(2, np.uint32)
        return Seed(self.seed, int(mixed[0]) << 32 | int(mixed[1]))


def as_generator(seed) -> np.random.Generator:
    """Accept a Seed, an int, or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, Seed):
        return seed.generator()
    return Seed(int(seed)).generator()


@dataclass(frozen=True)
class Gaussian:
    """N(mean, cov) with cov either isotropic (scalar ``var``) or diagonal (vector ``var``).

    A zero variance is tolerated only as the point-mass sentinel produced by
    ``forward.marginal`` at t = 0; density and divergence routines reject it.
    """

    mean: np.ndarray
    var: float | np.ndarray
    _diag: bool = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        var = np.asarray(self.var, dtype=float)
        if var.ndim == 0:
            diag = False
            var = float(var)
            if not var >= 0.0:
                raise ValueError(f"variance must be positive, got {var}")
        elif var.ndim == 1:
            diag = True
            if var.shape != mean.shape:
                raise ValueError(f"diagonal covariance has length {var.shape[0]}, mean has {mean.shape[0]}")
            if not np.all(var >= 0.0):
                raise ValueError("all variance entries must be positive")
        else:
            raise ValueError("cov descriptor must be a scalar (isotropic) or a vector (diagonal)")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        object.__setattr__(self, "_diag", diag)

    @classmethod
    def isotropic(cls, mean, var: float) -> "Gaussian":
        return cls(mean, float(var))

    @classmethod
    def diagonal(cls, mean, var) -> "Gaussian":
        return cls(mean, np.asarray(var, dtype=float))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self._diag

    @property
    def var_vector(self) -> np.ndarray:
        """Per-coordinate variances, regardless of descriptor."""
        if self._diag:
            return self.var
        return np.full(self.dim, self.var)

    @property
    def cov(self) -> np.ndarray:
        return np.diag(self.var_vector)

    def _require_proper(self):
        if np.any(self.var_vector <= 0.0):
            raise ValueError("operation needs strictly positive variances (got a point mass)")


def _check_dim(g: Gaussian, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dim:
        raise ValueError(f"dimension mismatch: point has {x.shape[-1]}, Gaussian has {g.dim}")
    return x


def log_density(g: Gaussian, x) -> float | np.ndarray:
    """log N(x; mean, cov). ``x`` may be a single vector or a batch of shape (n, d)."""
    x = _check_dim(g, x)
    g._require_proper()
    v = g.var_vector
    sq = np.sum((x - g.mean) ** 2 / v, axis=-1)
    out = -0.5 * (g.dim * LOG_2PI + np.sum(np.log(v)) + sq)
    return float(out) if np.ndim(out) == 0 else out


def density(g: Gaussian, x):
    return np.exp(log_density(g, x))


def sample(g: Gaussian, seed, n: int) -> np.ndarray:
    """Draw ``n`` samples as mean + A z with A = diag(sqrt(var))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = as_generator(seed).standard_normal((n, g.dim))
    return g.mean + np.sqrt(g.var_vector) * z


def product(p: Gaussian, q: Gaussian) -> tuple[Gaussian, float]:
    """Pointwise product p(x) q(x) = exp(log_scale) * N(x; mean, cov).

    ``log_scale`` is log of the integral of p*q, i.e. log N(mu_p; mu_q, S_p + S_q).
    """
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    p._require_proper()
    q._require_proper()
    vp, vq = p.var_vector, q.var_vector
    var = 1.0 / (1.0 / vp + 1.0 / vq)
    mean = var * (p.mean / vp + q.mean / vq)
    joint = Gaussian(q.mean, vp + vq)
    log_scale = log_density(joint, p.mean)
    if not (p.is_diagonal or q.is_diagonal):
        return Gaussian(mean, float(var[0])), log_scale
    return Gaussian(mean, var), log_scale


def kl(p: Gaussian, q: Gaussian) -> float:
    """KL(p || q) in nats."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    p._require_proper()
    q._require_proper()
    vp, vq = p.var_vector, q.var_vector
    ratio = vp / vq
    terms = ratio + (p.mean - q.mean) ** 2 / vq - 1.0 - np.log(ratio)
    return float(max(0.5 * np.sum(terms), 0.0))


def quad_form_expectation(g: Gaussian, A) -> float:
    """E[(x - mu)^T A (x - mu)] = tr(A Sigma)."""
    A = np.asarray(A, dtype=float)
    if A.shape != (g.dim, g.dim):
        raise ValueError(f"A must be {g.dim}x{g.dim}, got {A.shape}")
    return float(np.dot(np.diag(A), g.var_vector))
