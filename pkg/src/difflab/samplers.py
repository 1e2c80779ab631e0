"""Reverse-time samplers: DDPM ancestral steps, the DDIM family, the VP
probability-flow ODE and the rectified straight-line ODE.

ODE kinds integrate on clocks where the field is smooth:

* ``pf_ode`` uses the log-SNR ``ell``; with abar = sigmoid(ell) the VP flow
  reads dx/d(ell) = (1 - abar)(x + score) / 2.
* ``rectified_ode`` uses the scaled state y = x / (sqrt(abar) + sqrt(1 - abar))
  and the clock s = log(1 + sqrt((1 - abar) / abar)), on which
  dy/ds = -(y - eps_hat). Its ``frozen`` stepper integrates this exactly with the
  predictor held fixed across each step.

Both finish with a jump to abar = 1 that returns x0_hat.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .forward import posterior_mean_eps_form
from .gaussian import Seed, as_generator
from .schedule import Schedule, subgrid

BLOCK = 1024
KINDS = ("ddpm", "ddim", "pf_ode", "rectified_ode")
SIGMA_MODES = ("tilde_beta", "zero", "eta")
STEPPERS = ("euler", "heun", "frozen")


class ODEError(FloatingPointError):
    pass


@dataclass
class SamplerConfig:
    kind: str = "ddim"
    grid: list[int] | None = None  # discrete kinds; None means the full grid
    n_steps: int | None = None  # discrete kinds: reduced grid size; ODE kinds: step count
    spacing: str = "uniform"
    sigma_mode: str = "zero"
    eta: float = 0.0
    stepper: str = "heun"
    seed: int = 0
    clip_x0: float | None = None
    record: str = "all"  # "all" or "final"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.stepper not in STEPPERS:
            raise ValueError(f"stepper must be one of {STEPPERS}")
        if self.stepper == "frozen" and self.kind != "rectified_ode":
            raise ValueError("the frozen stepper is only defined for rectified_ode")
        if self.record not in ("all", "final"):
            raise ValueError("record must be 'all' or 'final'")
        if self.kind in ("pf_ode", "rectified_ode") and (self.n_steps is None or self.n_steps < 1):
            raise ValueError("ODE samplers need n_steps >= 1")
        if self.clip_x0 is not None and not self.clip_x0 > 0.0:
            raise ValueError("clip_x0 must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SamplerRun:
    times: list  # grid times, decreasing noise; ints (discrete) or log-SNR floats (ODE)
    states: list[np.ndarray]
    diagnostics: dict[str, list[float]] = field(default_factory=dict)
    time_kind: str = "index"
    elapsed: float = 0.0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t) -> np.ndarray:
        return self.states[self.times.index(t)]


# --- single steps -----------------------------------------------------------------


def _x0_and_eps(x, abar, pred, cond, clip):
    eps = pred.eps(x, abar, cond)
    x0 = (x - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)
    if clip is not None:
        x0 = np.clip(x0, -clip, clip)
        eps = (x - np.sqrt(abar) * x0) / np.sqrt(1.0 - abar)
    return x0, eps


def ddim_sigma2(sched: Schedule, t_from: int, t_to: int, mode: str, eta: float = 0.0) -> float:
    """Step variance; ``tilde_beta`` generalises beta~ to non-adjacent indices."""
    if mode == "zero":
        return 0.0
    ab_f, ab_t = sched.alpha_bars[t_from], sched.alpha_bars[t_to]
    tb = sched.one_minus_alpha_bars[t_to] / sched.one_minus_alpha_bars[t_from] * (1.0 - ab_f / ab_t)
    if mode == "tilde_beta":
        return float(tb)
    if mode == "eta":
        return float(eta * eta * tb)
    raise ValueError(f"unknown sigma mode {mode!r}")


def ddpm_step(x_t, t: int, pred, sched: Schedule, seed, cond=None, shift: Callable | None = None):
    """x_{t-1} = mu_theta(x_t, t) + sqrt(beta~_t) z; no noise at t = 1."""
    t = sched.check_t(t, lo=1)
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    eps = pred.eps(x_t, sched.alpha_bars[t], cond)
    mean = posterior_mean_eps_form(x_t, eps, t, sched)
    var = sched.tilde_betas[t]
    if shift is not None:
        mean = mean + shift(x_t, t, var)
    if var == 0.0:
        return mean
    z = as_generator(seed).standard_normal(x_t.shape)
    return mean + np.sqrt(var) * z


def ddim_step(x_t, t_from: int, t_to: int, pred, sched: Schedule, sigma_mode: str = "zero", seed=None, eta: float = 0.0, cond=None, clip_x0=None, shift: Callable | None = None):
    """One member of the DDIM family from ``t_from`` to ``t_to`` (t_to = 0 returns x0_hat)."""
    t_from = sched.check_t(t_from, lo=1)
    t_to = sched.check_t(t_to)
    if t_to >= t_from:
        raise ValueError("t_to must be smaller than t_from")
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    ab_f, ab_t = sched.alpha_bars[t_from], sched.alpha_bars[t_to]
    if t_to > 0 and ab_t == ab_f and ddim_sigma2(sched, t_from, t_to, sigma_mode, eta) == 0.0 and shift is None:
        return x_t.copy()  # zero-length jump on the noise-level axis
    x0, eps = _x0_and_eps(x_t, ab_f, pred, cond, clip_x0)
    if t_to == 0:
        return x0
    sigma2 = ddim_sigma2(sched, t_from, t_to, sigma_mode, eta)
    room = sched.one_minus_alpha_bars[t_to] - sigma2
    if room < -1e-15:
        raise ValueError(f"sigma^2 = {sigma2} exceeds 1 - abar_to = {sched.one_minus_alpha_bars[t_to]}")
    mean = np.sqrt(ab_t) * x0 + np.sqrt(max(room, 0.0)) * eps
    if shift is not None:
        mean = mean + shift(x_t, t_from, sigma2)
    if sigma2 == 0.0:
        return mean
    z = as_generator(seed).standard_normal(x_t.shape)
    return mean + np.sqrt(sigma2) * z


# --- ODE fields and integration ------------------------------------------------------


def _score_from(source, x, abar, cond=None):
    """Score from a GaussianMixture or from an eps predictor."""
    if hasattr(source, "score_abar"):
        return source.score_abar(x, abar)
    a = np.broadcast_to(np.asarray(abar, dtype=float), (np.atleast_2d(x).shape[0],)).reshape(-1, 1)
    return -source.eps(x, abar, cond) / np.sqrt(1.0 - a)


def pf_ode_velocity(x, u, source, sched: Schedule, cond=None):
    """dx/du = -beta(u) (x + score) / 2 on the schedule's continuous clock u in (0, 1]."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u > 1.0)):
        raise ValueError("u must lie in (0, 1]")
    beta = np.broadcast_to(sched.beta_continuous(u), (x.shape[0],)).reshape(-1, 1)
    abar = sched.alpha_bar_continuous(u)
    return -0.5 * beta * (x + _score_from(source, x, abar, cond))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def pf_ode_logsnr_field(source, cond=None):
    """dx/d(ell) for the VP flow; ell increases towards the data."""

    def field(x, ell):
        ab = float(sigmoid(ell))
        return 0.5 * (1.0 - ab) * (x + _score_from(source, x, ab, cond))

    return field


def rectified_abar(s):
    """abar on the rectified clock s = log(1 + sqrt((1 - abar) / abar))."""
    return 1.0 / (1.0 + np.expm1(s) ** 2)


def rectified_clock(abar):
    return np.log1p(np.sqrt((1.0 - np.asarray(abar)) / np.asarray(abar)))


def rectified_scale(abar):
    return np.sqrt(abar) + np.sqrt(1.0 - abar)


def rectified_field(pred, cond=None, clip_x0=None):
    """dy/ds = -(y - eps_hat) for the scaled state y; s decreases towards the data."""

    def field(y, s):
        ab = float(rectified_abar(s))
        x = y * rectified_scale(ab)
        _, eps = _x0_and_eps(x, ab, pred, cond, clip_x0)
        return -(y - eps)

    return field


def integrate_ode(field: Callable, x_start, grid, stepper: str = "heun", frozen_eps: Callable | None = None) -> list[np.ndarray]:
    """Explicit integration of dx/dtau = field(x, tau) through the nodes of ``grid``.

    Returns every intermediate state, starting with ``x_start``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid needs at least two nodes")
    d = np.diff(grid)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("grid must be strictly monotone")
    x = np.array(x_start, dtype=float)
    out = [x]
    for k, (a, b) in enumerate(zip(grid[:-1], grid[1:])):
        h = b - a
        if stepper == "euler":
            x = x + h * field(x, a)
        elif stepper == "heun":
            k1 = field(x, a)
            x = x + 0.5 * h * (k1 + field(x + h * k1, b))
        elif stepper == "frozen":
            # exact solution of dy/ds = -(y - e) with e held at its value at the step start
            e = frozen_eps(x, a)
            x = e + (x - e) * np.exp(-h)
        else:
            raise ValueError(f"unknown stepper {stepper!r}")
        if not np.all(np.isfinite(x)):
            raise ODEError(f"non-finite state after step {k} (tau {a} -> {b})")
        out.append(x)
    return out


def ode_grid(sched: Schedule, kind: str, n_steps: int) -> np.ndarray:
    """Nodes uniform in log-SNR from t = T to t = 1, expressed on the kind's clock."""
    ell = np.linspace(sched.log_snrs[sched.T], sched.log_snrs[1], n_steps + 1)
    if kind == "pf_ode":
        return ell
    if kind == "rectified_ode":
        return rectified_clock(sigmoid(ell))
    raise ValueError(f"{kind!r} is not an ODE kind")


# --- full runs -----------------------------------------------------------------------


def _block_ranges(n: int) -> list[tuple[int, int]]:
    return [(i, min(i + BLOCK, n)) for i in range(0, n, BLOCK)]


def _run_discrete(cfg: SamplerConfig, pred, sched, grid, x, rng, cond, shift, diag):
    times, states = [grid[0]], [x]
    steps = list(zip(grid, grid[1:] + [0]))
    for t_from, t_to in steps:
        if cfg.kind == "ddpm":
            if t_to != t_from - 1:
                raise ValueError("ddpm needs the full grid")
            x_new = ddpm_step(x, t_from, pred, sched, rng, cond=cond, shift=shift)
        else:
            x_new = ddim_step(x, t_from, t_to, pred, sched, cfg.sigma_mode, rng, cfg.eta, cond, cfg.clip_x0, shift)
        diag.setdefault("mean_step_norm", []).append(float(np.mean(np.linalg.norm(x_new - x, axis=1))) if x.size else 0.0)
        x = x_new
        if cfg.record == "all" or t_to == 0:
            times.append(t_to)
            states.append(x)
    return times, states


def _run_ode(cfg: SamplerConfig, pred, sched, x, cond):
    grid = ode_grid(sched, cfg.kind, cfg.n_steps)
    if cfg.kind == "pf_ode":
        traj = integrate_ode(pf_ode_logsnr_field(pred, cond), x, grid, cfg.stepper)
    else:
        scales = [rectified_scale(float(rectified_abar(s))) for s in grid]

        def frozen(y, s):
            ab = float(rectified_abar(s))
            return _x0_and_eps(y * rectified_scale(ab), ab, pred, cond, cfg.clip_x0)[1]

        traj = integrate_ode(rectified_field(pred, cond, cfg.clip_x0), x / scales[0], grid, cfg.stepper, frozen_eps=frozen)
        traj = [y * c for y, c in zip(traj, scales)]
    x0, _ = _x0_and_eps(traj[-1], sched.alpha_bars[1], pred, cond, cfg.clip_x0)
    ell = list(ode_grid(sched, "pf_ode", cfg.n_steps))
    if cfg.record == "all":
        return ell + [np.inf], traj + [x0]
    return [ell[0], np.inf], [traj[0], x0]


def run_sampler(cfg: SamplerConfig, pred, sched: Schedule, n_chains: int, dim: int | None = None, cond=None, x_start=None, shift: Callable | None = None, threads: int = 1) -> SamplerRun:
    """Run ``n_chains`` independent chains from x_T ~ N(0, I) (or ``x_start``).

    Chains are processed in blocks of 1024, each with its own stream
    ``Seed(cfg.seed, block)``, so the result does not depend on ``threads``.
    """
    if n_chains < 0:
        raise ValueError("n_chains must be >= 0")
    if dim is None:
        if x_start is None:
            raise ValueError("give dim or x_start")
        dim = np.asarray(x_start).shape[-1]
    discrete = cfg.kind in ("ddpm", "ddim")
    grid = None
    if discrete:
        grid = subgrid(sched, indices=cfg.grid) if cfg.grid is not None else subgrid(sched, n_steps=cfg.n_steps, spacing=cfg.spacing) if cfg.n_steps else subgrid(sched)
    t0 = time.perf_counter()
    if n_chains == 0:
        times = (grid + [0]) if discrete else []
        empty = np.zeros((0, dim))
        return SamplerRun(list(times), [empty for _ in times], {}, "index" if discrete else "logsnr", 0.0)

    def one_block(bi_range):
        bi, (lo, hi) = bi_range
        rng = Seed(cfg.seed, bi).generator()
        if x_start is None:
            x = rng.standard_normal((hi - lo, dim))
        else:
            x = np.array(np.atleast_2d(x_start)[lo:hi], dtype=float)
        c = cond[lo:hi] if cond is not None and np.ndim(cond) == 1 else cond
        diag: dict[str, list[float]] = {}
        if discrete:
            times, states = _run_discrete(cfg, pred, sched, grid, x, rng, c, shift, diag)
        else:
            times, states = _run_ode(cfg, pred, sched, x, c)
        return times, states, diag, hi - lo

    blocks = list(enumerate(_block_ranges(n_chains)))
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_block, blocks))
    else:
        results = [one_block(b) for b in blocks]
    times = results[0][0]
    states = [np.concatenate([r[1][i] for r in results]) for i in range(len(times))]
    diag: dict[str, list[float]] = {}
    for key in results[0][2]:
        w = np.array([r[3] for r in results], dtype=float)
        vals = np.array([r[2][key] for r in results])
        diag[key] = list((w @ vals) / w.sum())
    return SamplerRun(list(times), states, diag, "index" if discrete else "logsnr", time.perf_counter() - t0)
