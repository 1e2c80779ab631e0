"""Predictor interface, the analytic oracle, the trainable network and losses.

Predictors are keyed by the noise level ``abar`` rather than the step index so
that the same object serves discrete samplers, reduced grids and ODE clocks.
The ``*_hat`` helpers accept a step index and a schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flow import Interpolant, marginal_velocity_straightline
from .forward import noise_batch
from .gaussian import as_generator
from .mixture import GaussianMixture
from .nn import EMA, MLP, Adam
from .schedule import Schedule


class TrainingDiverged(RuntimeError):
    pass


def _rows(abar, n):
    return np.broadcast_to(np.asarray(abar, dtype=float), (n,)).reshape(-1, 1)


def log_snr(abar):
    abar = np.asarray(abar, dtype=float)
    return np.log(abar) - np.log1p(-abar)


class Predictor:
    """Subclasses implement ``eps``; the other views follow from it."""

    def eps(self, x, abar, cond=None) -> np.ndarray:
        raise NotImplementedError

    def x0(self, x, abar, cond=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = _rows(abar, x.shape[0])
        return (x - np.sqrt(1.0 - a) * self.eps(x, abar, cond)) / np.sqrt(a)

    def velocity(self, x, abar, cond=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -(x - self.eps(x, abar, cond))

    def eps_hat(self, x, t: int, sched: Schedule, cond=None):
        return self.eps(x, _abar_at(t, sched), cond)

    def x0_hat(self, x, t: int, sched: Schedule, cond=None):
        return self.x0(x, _abar_at(t, sched), cond)

    def velocity_hat(self, x, t: int, sched: Schedule, cond=None):
        return self.velocity(x, _abar_at(t, sched), cond)


def _abar_at(t: int, sched: Schedule) -> float:
    return float(sched.alpha_bars[sched.check_t(t, lo=1)])


def _check_abar(abar):
    a = np.asarray(abar, dtype=float)
    if np.any(~((a > 0.0) & (a < 1.0))):
        raise ValueError("predictors need 0 < abar < 1 (no noise to predict at abar = 1)")


class AnalyticOracle(Predictor):
    """Bayes-optimal noise prediction for a Gaussian mixture.

    ``cond`` may be None (full mixture), a label, or an array of labels where a
    negative entry means unconditional.
    """

    def __init__(self, mixture: GaussianMixture):
        self.mixture = mixture
        self._sub = {int(y): mixture.conditional(int(y)) for y in mixture.classes}

    def _source(self, y):
        if y is None or y < 0:
            return self.mixture
        try:
            return self._sub[int(y)]
        except KeyError:
            raise ValueError(f"unknown label {y}") from None

    def eps(self, x, abar, cond=None):
        _check_abar(abar)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if cond is None or np.ndim(cond) == 0:
            return self._source(cond).eps_abar(x, abar)
        cond = np.asarray(cond, dtype=int)
        ab = np.broadcast_to(np.asarray(abar, dtype=float), (x.shape[0],))
        out = np.empty_like(x)
        for y in np.unique(cond):
            sel = cond == y
            out[sel] = self._source(int(y)).eps_abar(x[sel], ab[sel])
        return out


class MLPPredictor(Predictor):
    """Wraps an MLP whose output is either the noise (``"eps"``) or the clean point (``"x0"``)."""

    def __init__(self, model: MLP, param: str = "eps"):
        if param not in ("eps", "x0"):
            raise ValueError("param must be 'eps' or 'x0'")
        self.model = model
        self.param = param

    def raw(self, x, abar, cond=None):
        _check_abar(abar)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ell = np.broadcast_to(log_snr(abar), (x.shape[0],))
        return self.model.forward(x, ell, cond)

    def eps(self, x, abar, cond=None):
        out = self.raw(x, abar, cond)
        if self.param == "eps":
            return out
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = _rows(abar, x.shape[0])
        return (x - np.sqrt(a) * out) / np.sqrt(1.0 - a)

    def x0(self, x, abar, cond=None):
        if self.param == "x0":
            return self.raw(x, abar, cond)
        return super().x0(x, abar, cond)


def vb_weight(t: int, sched: Schedule) -> float:
    """w_t = beta_t / (2 (1 - beta_t)(1 - abar_{t-1})), defined for t >= 2."""
    t = sched.check_t(t, lo=1)
    if t < 2:
        raise ValueError("the VB weight is defined for t >= 2")
    return float(sched.betas[t] / (2.0 * (1.0 - sched.betas[t]) * sched.one_minus_alpha_bars[t - 1]))


def vb_weights(sched: Schedule) -> np.ndarray:
    """Array of w_t indexed by t, with zeros at t = 0 and t = 1."""
    w = np.zeros(sched.T + 1)
    if sched.T >= 2:
        t = np.arange(2, sched.T + 1)
        w[2:] = sched.betas[t] / (2.0 * (1.0 - sched.betas[t]) * sched.one_minus_alpha_bars[t - 1])
    return w


# --- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 6000
    batch_size: int = 2048
    lr: float = 2e-3
    lr_final: float = 2e-5
    weighting: str = "uniform"  # or "vb"
    # "logsnr" draws continuous log-SNR uniformly; "uniform" draws t from 1..T.
    # Uniform t leaves the high-SNR end nearly unvisited.
    time_law: str = "logsnr"
    seed: int = 0
    p_drop: float = 0.1
    ema_decay: float = 0.995
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("steps must be >= 0, batch_size and log_every >= 1")
        if not self.lr > 0.0 or not self.lr_final > 0.0:
            raise ValueError("learning rates must be positive")
        if self.weighting not in ("uniform", "vb"):
            raise ValueError("weighting must be 'uniform' or 'vb'")
        if self.time_law not in ("uniform", "logsnr"):
            raise ValueError("time_law must be 'uniform' or 'logsnr'")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError("p_drop must lie in [0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")


@dataclass
class Batch:
    x: np.ndarray
    ell: np.ndarray
    target: np.ndarray
    weight: np.ndarray
    cond: np.ndarray | None = None


@dataclass
class FitResult:
    model: MLP
    losses: list[tuple[int, float]] = field(default_factory=list)


def fit_regression(model: MLP, make_batch: Callable[[np.random.Generator, int], Batch], cfg: TrainConfig) -> FitResult:
    """Minimise mean(weight * ||model(x, ell, cond) - target||^2) with Adam.

    The learning rate decays geometrically from ``lr`` to ``lr_final`` and the
    returned model carries the exponential moving average of the weights.
    """
    rng = as_generator(cfg.seed)
    work = model.copy()
    opt = Adam(work.params, lr=cfg.lr)
    ema = EMA(work.params, cfg.ema_decay)
    losses: list[tuple[int, float]] = []
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.steps - 1, 1))
    for step in range(cfg.steps):
        b = make_batch(rng, cfg.batch_size)
        out, cache = work.forward(b.x, b.ell, b.cond, keep=True)
        resid = out - b.target
        w = b.weight.reshape(-1, 1)
        loss = float(np.mean(w * resid * resid) * resid.shape[1])
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at step {step}")
        grads = work.backward(cache, 2.0 * w * resid / resid.shape[0])
        opt.step(grads, lr=cfg.lr * decay**step)
        ema.update(work.params)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            losses.append((step, loss))
    return FitResult(MLP(work.spec, ema.shadow), losses)


LOGSNR_MARGIN = 1.0


def eps_batch_maker(data: GaussianMixture, sched: Schedule, cfg: TrainConfig, conditional: bool):
    """Batches of (x_t, log-SNR, eps) from the forward reparameterisation."""
    if cfg.weighting == "vb" and cfg.time_law != "uniform":
        raise ValueError("vb weighting is defined on the discrete uniform time law")
    if cfg.weighting == "vb":
        if sched.T < 2:
            raise ValueError("vb weighting needs T >= 2")
        w_all = vb_weights(sched)
        w_all = w_all / w_all[2:].mean()
        t_lo = 2
    else:
        w_all = np.ones(sched.T + 1)
        t_lo = 1
    ell_all = sched.log_snrs

    # pad the continuous range so the end times are not at the edge of the training support
    ell_lo, ell_hi = ell_all[sched.T] - LOGSNR_MARGIN, ell_all[1] + LOGSNR_MARGIN

    def make(rng, n):
        x0, comp = data.sample(rng, n, return_components=True)
        if cfg.time_law == "uniform":
            t = rng.integers(t_lo, sched.T + 1, size=n)
            ell, ab, w = ell_all[t], sched.alpha_bars[t], w_all[t]
        else:
            ell = rng.uniform(ell_lo, ell_hi, size=n)
            ab, w = 1.0 / (1.0 + np.exp(-ell)), np.ones(n)
        eps = rng.standard_normal(x0.shape)
        x_t = noise_batch(x0, ab, eps)
        cond = None
        if conditional:
            cond = data.labels[comp].copy()
            cond[rng.random(n) < cfg.p_drop] = -1
        return Batch(x_t, ell, eps, w, cond)

    return make


def train_eps(model: MLP, data: GaussianMixture, sched: Schedule, cfg: TrainConfig):
    """Weighted noise matching. Returns ``(MLPPredictor, loss_curve)``.

    A network with a label table is trained with condition dropout ``p_drop``,
    so one set of weights serves conditional and unconditional queries.
    """
    if model.spec.dim != data.dim:
        raise ValueError("model and data dimensions differ")
    conditional = model.spec.n_labels > 0
    result = fit_regression(model, eps_batch_maker(data, sched, cfg, conditional), cfg)
    return MLPPredictor(result.model, "eps"), result.losses


def eps_loss_floor(data: GaussianMixture, sched: Schedule, seed, n: int = 100_000) -> float:
    """Monte-Carlo estimate of E||eps - E[eps | x_t]||^2 under uniform t."""
    rng = as_generator(seed)
    oracle = AnalyticOracle(data)
    x0 = data.sample(rng, n)
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    ab = sched.alpha_bars[t]
    x_t = noise_batch(x0, ab, eps)
    return float(np.mean(np.sum((eps - oracle.eps(x_t, ab)) ** 2, axis=1)))


PROBE_TIMES = (1, 10, 50, 100, 250, 500, 750, 1000)


def probe_eps_error(pred: Predictor, data: GaussianMixture, sched: Schedule, times=PROBE_TIMES, lim: float = 2.0, n: int = 9) -> float:
    """Max |eps_hat - eps*| over an n x n grid on [-lim, lim]^2 and the given times."""
    g = np.linspace(-lim, lim, n)
    if data.dim != 2:
        raise ValueError("the probe grid is two-dimensional")
    X = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    oracle = AnalyticOracle(data)
    worst = 0.0
    for t in times:
        if t > sched.T:
            continue
        ab = sched.alpha_bars[t]
        worst = max(worst, float(np.max(np.abs(pred.eps(X, ab) - oracle.eps(X, ab)))))
    return worst


# --- flow matching losses -------------------------------------------------------


def cfm_loss(v_model: Callable, interp: Interpolant, batch, weighting: Callable | None = None) -> float:
    """Monte-Carlo CFM objective mean w(t) ||v(z_t, t) - u_t||^2 over a PathSample batch."""
    v = np.asarray(v_model(batch.z, batch.t), dtype=float)
    if v.shape != batch.u.shape:
        raise ValueError(f"velocity shape {v.shape} differs from target shape {batch.u.shape}")
    w = np.ones_like(batch.t) if weighting is None else np.asarray(weighting(batch.t), dtype=float)
    return float(np.mean(w * np.sum((v - batch.u) ** 2, axis=1)))


def mfm_loss(v_model: Callable, interp: Interpolant, data: GaussianMixture, batch, weighting: Callable | None = None) -> float:
    """MFM objective against the analytic marginal velocity at the batch points."""
    v = np.asarray(v_model(batch.z, batch.t), dtype=float)
    u = marginal_velocity_straightline(data, interp, batch.t, batch.z)
    w = np.ones_like(batch.t) if weighting is None else np.asarray(weighting(batch.t), dtype=float)
    return float(np.mean(w * np.sum((v - u) ** 2, axis=1)))


def flow_time_feature(t) -> np.ndarray:
    """Log-SNR-like coordinate of the straight-line clock, 2 log((1 - t) / t)."""
    t = np.clip(np.asarray(t, dtype=float), 1e-9, 1.0 - 1e-9)
    return 2.0 * (np.log1p(-t) - np.log(t))


def velocity_batch_maker(data: GaussianMixture, interp: Interpolant, t_range=(0.0, 1.0), weighting: Callable | None = None):
    """CFM batches: (z_t, time feature, u_t) with t uniform in ``t_range``."""
    lo, hi = t_range

    def make(rng, n):
        t = rng.uniform(lo, hi, size=n)
        x0 = data.sample(rng, n)
        xT = rng.standard_normal(x0.shape)
        rho = interp.rho(t)[:, None]
        z = (1.0 - rho) * x0 + rho * xT
        u = interp.rho_dot(t)[:, None] * (xT - x0)
        w = np.ones(n) if weighting is None else np.asarray(weighting(t), dtype=float)
        return Batch(z, flow_time_feature(t), u, w)

    return make


class VelocityModel:
    """Callable ``v(z, t)`` backed by an MLP trained on straight-line targets."""

    def __init__(self, model: MLP):
        self.model = model

    def __call__(self, z, t):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        ell = np.broadcast_to(flow_time_feature(t), (z.shape[0],))
        return self.model.forward(z, ell)
