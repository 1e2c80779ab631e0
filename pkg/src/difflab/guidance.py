"""Guided sampling: classifier mean shifts, classifier-free blending, a
log-SNR guidance schedule, stabilizers and guidance distillation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .mixture import GaussianMixture
from .nn import MLP, MLPSpec
from .predictor import Batch, MLPPredictor, Predictor, TrainConfig, fit_regression, log_snr
from .samplers import SamplerConfig, ddim_step
from .schedule import Schedule, subgrid


@dataclass
class GuidanceConfig:
    mode: str = "none"  # none | classifier | cfg
    lam: float = 0.0
    schedule: bool = False  # use lambda_t = lam_max * sigmoid(a * ell + b) instead of a constant
    lam_max: float = 4.0
    a: float = 0.5
    b: float = 0.0
    norm_rescale: bool = False
    rescale_eps: float = 1e-8
    dynamic_threshold: bool = False
    percentile: float = 99.5
    zero_mean: bool = False
    label: int = 0

    def __post_init__(self):
        if self.mode not in ("none", "classifier", "cfg"):
            raise ValueError("mode must be none, classifier or cfg")
        if self.lam < 0.0 or self.lam_max < 0.0:
            raise ValueError("guidance strength must be >= 0")
        if not self.a > 0.0:
            raise ValueError("schedule slope a must be positive")
        if not 50.0 < self.percentile <= 100.0:
            raise ValueError("percentile must lie in (50, 100]")
        if not self.rescale_eps > 0.0:
            raise ValueError("rescale_eps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def strength(self, abar) -> np.ndarray | float:
        if self.schedule:
            return lambda_schedule_ell(log_snr(abar), self.lam_max, self.a, self.b)
        return self.lam


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def lambda_schedule_ell(ell, lam_max: float = 4.0, a: float = 0.5, b: float = 0.0):
    if not a > 0.0:
        raise ValueError("a must be positive")
    return lam_max * _sigmoid(a * np.asarray(ell, dtype=float) + b)


def lambda_schedule(t: int, sched: Schedule, lam_max: float = 4.0, a: float = 0.5, b: float = 0.0) -> float:
    """lambda_t = lam_max * sigmoid(a * ell_t + b)."""
    t = sched.check_t(t)
    return float(lambda_schedule_ell(sched.log_snrs[t], lam_max, a, b))


def cfg_blend(eps_uncond, eps_cond, lam) -> np.ndarray:
    eps_uncond = np.asarray(eps_uncond, dtype=float)
    eps_cond = np.asarray(eps_cond, dtype=float)
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(f"shape mismatch {eps_uncond.shape} vs {eps_cond.shape}")
    return eps_uncond + lam * (eps_cond - eps_uncond)


def guided_reverse_mean(x_t, t: int, eps_lam, sched: Schedule) -> np.ndarray:
    t = sched.check_t(t, lo=1)
    coef = sched.betas[t] / sched.sqrt_one_minus_abar(t)
    return (np.asarray(x_t, dtype=float) - coef * np.asarray(eps_lam, dtype=float)) / np.sqrt(sched.alphas[t])


def cfg_shift_coefficient(t: int, sched: Schedule) -> float:
    """Guided minus unguided mean equals this coefficient times lambda * delta_eps."""
    t = sched.check_t(t, lo=1)
    return float(-sched.betas[t] / (np.sqrt(sched.alphas[t]) * sched.sqrt_one_minus_abar(t)))


def classifier_guided_mean(mu, classifier_grad, lam: float, sigma2: float) -> np.ndarray:
    """mu + lam * sigma^2 * grad log p(y | x_t)."""
    return np.asarray(mu, dtype=float) + lam * sigma2 * np.asarray(classifier_grad, dtype=float)


def norm_rescale(delta, eps_u, eps: float = 1e-8) -> np.ndarray:
    """delta * ||eps_u|| / (||delta|| + eps), row by row."""
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    eps_u = np.atleast_2d(np.asarray(eps_u, dtype=float))
    nd = np.linalg.norm(delta, axis=1, keepdims=True)
    nu = np.linalg.norm(eps_u, axis=1, keepdims=True)
    return delta * nu / (nd + eps)


def dynamic_threshold(x0, percentile: float = 99.5) -> np.ndarray:
    """Clamp each row of x0 to +-(percentile of its absolute coordinates). No rescale."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    s = np.percentile(np.abs(x0), percentile, axis=1, keepdims=True)
    return np.clip(x0, -s, s)


def stabilize(value, cfg: GuidanceConfig, eps_u=None, kind: str = "delta") -> np.ndarray:
    """Apply the enabled stabilizer: ``kind="delta"`` rescales a guidance increment
    (needs ``eps_u``), ``kind="x0"`` thresholds a clean-point estimate."""
    if kind == "delta":
        out = np.atleast_2d(np.asarray(value, dtype=float))
        if cfg.zero_mean:
            out = out - out.mean(axis=1, keepdims=True)
        if cfg.norm_rescale:
            out = norm_rescale(out, eps_u, cfg.rescale_eps)
        return out
    if kind == "x0":
        return dynamic_threshold(value, cfg.percentile) if cfg.dynamic_threshold else np.atleast_2d(value)
    raise ValueError(f"unknown stabilizer target {kind!r}")


# --- guided predictors ------------------------------------------------------------


class AnalyticClassifier:
    """Exact p(y | x_t) for a labelled mixture under the VP forward process."""

    def __init__(self, mixture: GaussianMixture):
        self.mixture = mixture

    def grad_log_prob(self, x, abar, y: int) -> np.ndarray:
        a = np.asarray(abar, dtype=float)
        return self.mixture.class_grad_scaled(x, y, np.sqrt(a), np.sqrt(1.0 - a))

    def log_prob(self, x, abar, y: int) -> np.ndarray:
        a = np.asarray(abar, dtype=float)
        logp, classes = self.mixture.class_log_posterior_scaled(x, np.sqrt(a), np.sqrt(1.0 - a))
        return logp[:, list(classes).index(y)]


def _lam_rows(cfg: GuidanceConfig, abar):
    lam = cfg.strength(abar)
    return np.reshape(lam, (-1, 1)) if np.ndim(lam) else lam


class CFGPredictor(Predictor):
    """eps_lam = eps_u + lam * (eps_c - eps_u), with optional stabilizers.

    The base predictor must answer both ``cond=None`` and ``cond=label``.
    """

    def __init__(self, base: Predictor, cfg: GuidanceConfig):
        self.base = base
        self.cfg = cfg

    def eps(self, x, abar, cond=None):
        y = self.cfg.label if cond is None else cond
        eps_u = self.base.eps(x, abar, None)
        eps_c = self.base.eps(x, abar, y)
        delta = eps_c - eps_u
        if self.cfg.norm_rescale or self.cfg.zero_mean:
            delta = stabilize(delta, self.cfg, eps_u)
        out = eps_u + _lam_rows(self.cfg, abar) * delta
        if self.cfg.dynamic_threshold:
            a = np.broadcast_to(np.asarray(abar, dtype=float), (out.shape[0],)).reshape(-1, 1)
            x = np.atleast_2d(x)
            x0 = dynamic_threshold((x - np.sqrt(1.0 - a) * out) / np.sqrt(a), self.cfg.percentile)
            out = (x - np.sqrt(a) * x0) / np.sqrt(1.0 - a)
        return out


class ClassifierGuidedPredictor(Predictor):
    """Score-form classifier guidance: eps - lam * sqrt(1 - abar) * grad log p(y | x).

    Used by deterministic samplers, where guidance can only act through eps.
    """

    def __init__(self, base: Predictor, classifier, cfg: GuidanceConfig):
        self.base = base
        self.classifier = classifier
        self.cfg = cfg

    def eps(self, x, abar, cond=None):
        eps = self.base.eps(x, abar, None)
        a = np.broadcast_to(np.asarray(abar, dtype=float), (np.atleast_2d(x).shape[0],)).reshape(-1, 1)
        return eps - _lam_rows(self.cfg, abar) * np.sqrt(1.0 - a) * self.classifier.grad_log_prob(x, abar, self.cfg.label)


def classifier_shift(classifier, cfg: GuidanceConfig, sched: Schedule):
    """Mean-shift hook for stochastic samplers: lam * sigma^2 * grad log p(y | x_t)."""

    def shift(x_t, t_from: int, sigma2: float):
        ab = sched.alpha_bars[t_from]
        return cfg.strength(ab) * sigma2 * classifier.grad_log_prob(x_t, ab, cfg.label)

    return shift


# --- distillation -----------------------------------------------------------------------


def teacher_trajectories(teacher: Predictor, sched: Schedule, grid: list[int], n: int, seed, dim: int) -> list[tuple[int, np.ndarray]]:
    """(t, x_t) pairs visited by deterministic DDIM under the teacher."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.standard_normal((n, dim))
    out = [(grid[0], x)]
    for t_from, t_to in zip(grid, grid[1:]):
        x = ddim_step(x, t_from, t_to, teacher, sched, "zero")
        out.append((t_to, x))
    return out


def distill_loss(student: Predictor, teacher: Predictor, sched: Schedule, pairs) -> float:
    """Sum over grid times of mean ||x0_student - x0_teacher||^2."""
    total = 0.0
    for t, x in pairs:
        ab = sched.alpha_bars[t]
        total += float(np.mean(np.sum((student.x0(x, ab) - teacher.x0(x, ab)) ** 2, axis=1)))
    return total


def distill(teacher: Predictor, sched: Schedule, grid: list[int] | None, dim: int, budget: TrainConfig, student: MLP | None = None, pool_chains: int = 4096, refresh_every: int = 500):
    """Fit an x0-parameterised student to the teacher's guided x0_hat along teacher
    DDIM trajectories. The student samples without any blending.

    Returns ``(MLPPredictor, loss_curve)``.
    """
    grid = subgrid(sched) if grid is None else subgrid(sched, indices=grid)
    if student is None:
        student = MLP(MLPSpec(dim), seed=budget.seed)
    if student.spec.dim != dim:
        raise ValueError("student dimension does not match")
    ell_grid = sched.log_snrs[np.asarray(grid)]
    cache: dict[str, np.ndarray] = {}

    def refresh(k: int):
        pairs = teacher_trajectories(teacher, sched, grid, pool_chains, (budget.seed, k), dim)
        cache["x"] = np.stack([p[1] for p in pairs])  # (S, n, d)
        cache["target"] = np.stack([teacher.x0(p[1], sched.alpha_bars[p[0]]) for p in pairs])

    calls = {"n": 0}

    def make(rng, n):
        if calls["n"] % refresh_every == 0:
            refresh(calls["n"] // refresh_every)
        calls["n"] += 1
        k = rng.integers(0, len(grid), size=n)
        i = rng.integers(0, pool_chains, size=n)
        return Batch(cache["x"][k, i], ell_grid[k], cache["target"][k, i], np.ones(n))

    result = fit_regression(student, make, budget)
    return MLPPredictor(result.model, "x0"), result.losses


class X0Wrapper(Predictor):
    """Exposes a fixed x0 map as a predictor (used for exact-matching checks)."""

    def __init__(self, x0_fn):
        self.x0_fn = x0_fn

    def eps(self, x, abar, cond=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.broadcast_to(np.asarray(abar, dtype=float), (x.shape[0],)).reshape(-1, 1)
        return (x - np.sqrt(a) * self.x0_fn(x, abar)) / np.sqrt(1.0 - a)


def default_ddim_config(n_steps: int, seed: int = 0) -> SamplerConfig:
    return SamplerConfig(kind="ddim", n_steps=n_steps, sigma_mode="zero", seed=seed, record="final")
