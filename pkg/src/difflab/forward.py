"""Forward noising chain and the exact reverse-time posterior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import Gaussian, as_generator
from .schedule import ONE_MINUS_ABAR_FLOOR, Schedule


@dataclass(frozen=True)
class NoisedSample:
    x_t: np.ndarray
    t: int
    eps: np.ndarray
    x0: np.ndarray


@dataclass(frozen=True)
class PosteriorParams:
    mean: np.ndarray
    var: float


def forward_step(x_prev, t: int, sched: Schedule, seed) -> np.ndarray:
    """One kernel step q(x_t | x_{t-1}); works on a vector or an (n, d) batch."""
    t = sched.check_t(t, lo=1)
    x_prev = np.asarray(x_prev, dtype=float)
    z = as_generator(seed).standard_normal(x_prev.shape)
    return np.sqrt(sched.alphas[t]) * x_prev + np.sqrt(sched.betas[t]) * z


def marginal(x0, t: int, sched: Schedule) -> Gaussian:
    """q(x_t | x0). At t = 0 this is the point mass at x0 (variance 0)."""
    t = sched.check_t(t)
    return Gaussian(np.sqrt(sched.alpha_bars[t]) * np.asarray(x0, dtype=float), float(sched.one_minus_alpha_bars[t]))


def sample_noised(x0, t: int, sched: Schedule, seed) -> NoisedSample:
    t = sched.check_t(t, lo=1)
    x0 = np.asarray(x0, dtype=float)
    eps = as_generator(seed).standard_normal(x0.shape)
    x_t = np.sqrt(sched.alpha_bars[t]) * x0 + np.sqrt(sched.one_minus_alpha_bars[t]) * eps
    return NoisedSample(x_t, t, eps, x0)


def noise_batch(x0: np.ndarray, abar, eps: np.ndarray) -> np.ndarray:
    """Vectorised reparameterisation with per-row alpha_bar values."""
    abar = np.asarray(abar, dtype=float)
    if abar.ndim == 1:
        abar = abar[:, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def eps_from_noised(x_t, x0, t: int, sched: Schedule) -> np.ndarray:
    t = sched.check_t(t, lo=1)
    return (np.asarray(x_t) - np.sqrt(sched.alpha_bars[t]) * np.asarray(x0)) / sched.sqrt_one_minus_abar(t)


def posterior(x_t, x0, t: int, sched: Schedule) -> PosteriorParams:
    """q(x_{t-1} | x_t, x0) in x0-form. At t = 1 the mean is x0 and the variance 0."""
    t = sched.check_t(t, lo=1)
    x_t = np.asarray(x_t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    omab_t = max(sched.one_minus_alpha_bars[t], ONE_MINUS_ABAR_FLOOR)
    c_t = np.sqrt(sched.alphas[t]) * sched.one_minus_alpha_bars[t - 1] / omab_t
    c_0 = np.sqrt(sched.alpha_bars[t - 1]) * sched.betas[t] / omab_t
    return PosteriorParams(c_t * x_t + c_0 * x0, float(sched.tilde_betas[t]))


def posterior_mean_eps_form(x_t, eps, t: int, sched: Schedule) -> np.ndarray:
    t = sched.check_t(t, lo=1)
    coef = sched.betas[t] / sched.sqrt_one_minus_abar(t)
    return (np.asarray(x_t, dtype=float) - coef * np.asarray(eps, dtype=float)) / np.sqrt(sched.alphas[t])
