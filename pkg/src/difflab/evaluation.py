"""Variational-bound terms, importance-sampled likelihood and sample metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .forward import posterior, posterior_mean_eps_form
from .gaussian import LOG_2PI, Gaussian, as_generator, kl
from .mixture import GaussianMixture
from .schedule import Schedule

DECODER_VAR_FLOOR = 1e-6


class LikelihoodUnderflow(FloatingPointError):
    pass


def vb_term(x0, t: int, pred, sched: Schedule, seed) -> float:
    """KL(q(x_{t-1} | x_t, x0) || p_theta(x_{t-1} | x_t)) at one draw of x_t, both with variance beta~_t."""
    t = sched.check_t(t, lo=1)
    if t < 2:
        raise ValueError("VB terms are defined for t >= 2")
    x0 = np.asarray(x0, dtype=float)
    eps = as_generator(seed).standard_normal(x0.shape)
    x_t = np.sqrt(sched.alpha_bars[t]) * x0 + np.sqrt(sched.one_minus_alpha_bars[t]) * eps
    q = posterior(x_t, x0, t, sched)
    eps_hat = np.asarray(pred.eps(x_t[None, :], sched.alpha_bars[t]))[0]
    mu_p = posterior_mean_eps_form(x_t, eps_hat, t, sched)
    return kl(Gaussian(q.mean, q.var), Gaussian(mu_p, q.var))


def _log_normal_iso(x, mean, var):
    d = x.shape[-1]
    return -0.5 * (d * (LOG_2PI + np.log(var)) + np.sum((x - mean) ** 2, axis=-1) / var)


def path_log_weights(x0, pred, sched: Schedule, n_particles: int, seed) -> np.ndarray:
    """log p(x_T) + sum log p_theta(x_{t-1} | x_t) - sum log q(x_t | x_{t-1}) per forward path."""
    rng = as_generator(seed)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n, d = n_particles, x0.shape[0]
    x_prev = np.broadcast_to(x0, (n, d)).copy()
    logw = np.zeros(n)
    for t in range(1, sched.T + 1):
        x_t = np.sqrt(sched.alphas[t]) * x_prev + np.sqrt(sched.betas[t]) * rng.standard_normal((n, d))
        logw -= _log_normal_iso(x_t, np.sqrt(sched.alphas[t]) * x_prev, sched.betas[t])
        mu = posterior_mean_eps_form(x_t, pred.eps(x_t, sched.alpha_bars[t]), t, sched)
        var = max(sched.tilde_betas[t], DECODER_VAR_FLOOR)
        logw += _log_normal_iso(x_prev, mu, var)
        x_prev = x_t
    logw += _log_normal_iso(x_prev, 0.0, 1.0)
    return logw


def log_mean_exp_jackknife(logw: np.ndarray) -> tuple[float, float]:
    logw = np.asarray(logw, dtype=float)
    n = logw.size
    if n == 0:
        raise ValueError("no particles")
    if np.all(logw == -np.inf):
        raise LikelihoodUnderflow("every particle weight underflowed")
    est = float(logsumexp(logw) - np.log(n))
    if n == 1:
        return est, float("inf")
    m = logw.max()
    w = np.exp(logw - m)
    total = w.sum()
    with np.errstate(divide="ignore"):
        loo = m + np.log(np.maximum(total - w, 0.0)) - np.log(n - 1)
    finite = np.isfinite(loo)
    if not np.all(finite):
        return est, float("inf")
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return est, float(se)


def loglik_importance(x0, pred, sched: Schedule, n_particles: int, seed) -> tuple[float, float]:
    """Importance-sampled log p_theta(x0) with the forward chain as proposal.

    Returns ``(estimate, jackknife standard error)``; one particle gives an
    infinite standard error.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    return log_mean_exp_jackknife(path_log_weights(x0, pred, sched, n_particles, seed))


def neg_elbo(x0, pred, sched: Schedule, n_particles: int, seed) -> tuple[float, float]:
    """Monte-Carlo -E_q[log weight] with its standard error; an upper bound on -log p_theta(x0)."""
    lw = path_log_weights(x0, pred, sched, n_particles, seed)
    return float(-lw.mean()), float(lw.std(ddof=1) / np.sqrt(lw.size)) if lw.size > 1 else float("inf")


def gaussian_chain_loglik(x0: float, mu0: float, v0: float, sched: Schedule) -> float:
    """Exact log p_theta(x0) for 1-D N(mu0, v0) data under the analytic predictor.

    Every reverse kernel is affine-Gaussian in x_t, so the model marginal of
    x0 follows by pushing N(0, 1) through the chain.
    """
    m, v = 0.0, 1.0
    for t in range(sched.T, 0, -1):
        ab, a, b = sched.alpha_bars[t], sched.alphas[t], sched.betas[t]
        # optimal eps for N(mu0, v0): (1 - ab)^(1/2) (x - sqrt(ab) mu0) / (ab v0 + 1 - ab)
        denom = ab * v0 + 1.0 - ab
        k_x = np.sqrt(1.0 - ab) / denom
        k_c = -np.sqrt(1.0 - ab) * np.sqrt(ab) * mu0 / denom
        coef = b / np.sqrt(1.0 - ab)
        A = (1.0 - coef * k_x) / np.sqrt(a)
        c = -coef * k_c / np.sqrt(a)
        s2 = max(sched.tilde_betas[t], DECODER_VAR_FLOOR)
        m, v = A * m + c, A * A * v + s2
    return float(-0.5 * (LOG_2PI + np.log(v) + (x0 - m) ** 2 / v))


# --- sample metrics -------------------------------------------------------------------


@dataclass
class Metrics:
    moment_error: float
    energy_distance: float
    mode_occupancy: dict[int, float]
    vb: float | None = None
    log_likelihood_is: float | None = None
    log_likelihood_se: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode_occupancy"] = {str(k): v for k, v in self.mode_occupancy.items()}
        return d


def moment_error(samples: np.ndarray, reference: GaussianMixture) -> float:
    samples = np.atleast_2d(samples)
    emp_mean = samples.mean(axis=0)
    emp_cov = np.cov(samples, rowvar=False).reshape(reference.dim, reference.dim)
    return float(max(np.max(np.abs(emp_mean - reference.mean())), np.max(np.abs(emp_cov - reference.cov()))))


def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """V-statistic 2 E|X - Y| - E|X - X'| - E|Y - Y'|."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    return float(2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean())


def energy_test(a: np.ndarray, b: np.ndarray, n_perm: int = 500, seed=0) -> tuple[float, float]:
    """Two-sample permutation test on the energy distance. Returns (statistic, p-value)."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    na, nb = a.shape[0], b.shape[0]
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least two points")
    pooled = np.concatenate([a, b])
    D = cdist(pooled, pooled)
    n = na + nb
    rng = as_generator(seed)
    labels = np.zeros((n, n_perm + 1))
    labels[:na, 0] = 1.0
    for j in range(1, n_perm + 1):
        labels[rng.permutation(n)[:na], j] = 1.0
    DS = D @ labels
    total = D.sum()
    s_aa = np.einsum("ij,ij->j", labels, DS)
    row_a = labels.T @ D.sum(axis=1)
    s_ab = row_a - s_aa
    s_bb = total - 2.0 * s_ab - s_aa
    stat = 2.0 * s_ab / (na * nb) - s_aa / na**2 - s_bb / nb**2
    p = (1.0 + np.sum(stat[1:] >= stat[0])) / (n_perm + 1.0)
    return float(stat[0]), float(p)


def mode_occupancy(samples: np.ndarray, reference: GaussianMixture) -> dict[int, float]:
    """Fraction of samples whose nearest component mean carries each label."""
    samples = np.atleast_2d(samples)
    nearest = np.argmin(cdist(samples, reference.means), axis=1)
    labels = reference.labels[nearest]
    return {int(y): float(np.mean(labels == y)) for y in reference.classes}


def projected_cdf(reference: GaussianMixture, direction) -> callable:
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    mu = reference.means @ u
    sd = np.sqrt(reference.vars)

    def cdf(v):
        v = np.asarray(v, dtype=float)[..., None]
        return np.sum(reference.weights * stats.norm.cdf((v - mu) / sd), axis=-1)

    return cdf


def ks_projection(samples: np.ndarray, reference: GaussianMixture, direction) -> float:
    """Kolmogorov distance between projected samples and the projected mixture."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    return float(stats.kstest(np.atleast_2d(samples) @ u, projected_cdf(reference, u)).statistic)


def sample_metrics(samples, reference: GaussianMixture, seed=0, n_energy: int = 1000) -> Metrics:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0 or samples.size == 0:
        raise ValueError("no samples")
    rng = as_generator(seed)
    sub = samples[rng.permutation(samples.shape[0])[:n_energy]]
    ref = reference.sample(rng, sub.shape[0])
    return Metrics(
        moment_error=moment_error(samples, reference),
        energy_distance=energy_distance(sub, ref),
        mode_occupancy=mode_occupancy(samples, reference),
    )
