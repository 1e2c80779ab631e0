"""Isotropic Gaussian mixtures with closed-form noisy marginals, scores and
Bayes-optimal predictors.

Internally every quantity is evaluated for a generic scaling
``x = a * x0 + b * z`` so the same code serves the VP clock
(a = sqrt(abar), b = sqrt(1 - abar)) and the straight-line clock
(a = 1 - rho, b = rho). ``a`` and ``b`` may be scalars or per-row arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .gaussian import LOG_2PI, as_generator
from .schedule import Schedule


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    vars: np.ndarray  # (K,)
    labels: np.ndarray  # (K,) int

    def __init__(self, weights, means, vars, labels=None):
        w = np.asarray(weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(means, dtype=float))
        v = np.asarray(vars, dtype=float).ravel()
        if labels is None:
            labels = np.zeros(w.shape[0], dtype=int)
        lab = np.asarray(labels, dtype=int).ravel()
        K = w.shape[0]
        if K == 0:
            raise ValueError("mixture needs at least one component")
        if mu.shape[0] != K or v.shape[0] != K or lab.shape[0] != K:
            raise ValueError("weights, means, vars and labels must have one entry per component")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(v <= 0.0):
            raise ValueError("component variances must be positive")
        for arr in (w, mu, v, lab):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "vars", v)
        object.__setattr__(self, "labels", lab)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    # construction and I/O ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "components": [
                {"w": float(w), "mean": [float(x) for x in mu], "var": float(v), "label": int(y)}
                for w, mu, v, y in zip(self.weights, self.means, self.vars, self.labels)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        comps = d["components"]
        return cls(
            [c["w"] for c in comps],
            [c["mean"] for c in comps],
            [c["var"] for c in comps],
            [c.get("label", 0) for c in comps],
        )

    @classmethod
    def from_json(cls, text: str) -> "GaussianMixture":
        return cls.from_dict(json.loads(text))

    def conditional(self, y: int) -> "GaussianMixture":
        """Sub-mixture of the components carrying label ``y``, renormalised."""
        keep = self.labels == y
        if not np.any(keep):
            raise ValueError(f"unknown label {y}")
        w = self.weights[keep]
        return GaussianMixture(w / w.sum(), self.means[keep], self.vars[keep], self.labels[keep])

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def cov(self) -> np.ndarray:
        mu = self.mean()
        c = np.einsum("k,ki,kj->ij", self.weights, self.means - mu, self.means - mu)
        return c + np.eye(self.dim) * float(self.weights @ self.vars)

    def sample(self, seed, n: int, return_components: bool = False):
        rng = as_generator(seed)
        k = rng.choice(self.n_components, size=n, p=self.weights)
        x = self.means[k] + np.sqrt(self.vars[k])[:, None] * rng.standard_normal((n, self.dim))
        return (x, k) if return_components else x

    # scaled marginals ----------------------------------------------------------

    def scaled(self, a: float, b: float) -> "GaussianMixture":
        """Law of a * X0 + b * Z for scalar a, b."""
        return GaussianMixture(self.weights, a * self.means, a * a * self.vars + b * b, self.labels)

    def _component_terms(self, x, a, b):
        """Per-component log(w_k N_k(x)), the noised variances and the scaled means."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dim:
            raise ValueError(f"points have dimension {x.shape[-1]}, mixture has {self.dim}")
        a = np.asarray(a, dtype=float).reshape(-1, 1)  # (n or 1, 1)
        b = np.asarray(b, dtype=float).reshape(-1, 1)
        v = a * a * self.vars[None, :] + b * b  # (n|1, K)
        mu = a[:, :, None] * self.means[None, :, :]  # (n|1, K, d)
        sq = np.sum((x[:, None, :] - mu) ** 2, axis=-1)  # (n, K)
        logc = np.log(self.weights) - 0.5 * (self.dim * (LOG_2PI + np.log(v)) + sq / v)
        return x, logc, v, mu

    def log_prob_scaled(self, x, a, b) -> np.ndarray:
        _, logc, _, _ = self._component_terms(x, a, b)
        return logsumexp(logc, axis=1)

    def score_scaled(self, x, a, b) -> np.ndarray:
        x, logc, v, mu = self._component_terms(x, a, b)
        r = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
        return np.einsum("nk,nkd->nd", r / v, mu - x[:, None, :])

    def responsibilities_scaled(self, x, a, b) -> np.ndarray:
        _, logc, _, _ = self._component_terms(x, a, b)
        return np.exp(logc - logsumexp(logc, axis=1, keepdims=True))

    def class_log_posterior_scaled(self, x, a, b) -> tuple[np.ndarray, np.ndarray]:
        """log p(y | x) for every class, shape (n, C), plus the class values."""
        _, logc, _, _ = self._component_terms(x, a, b)
        total = logsumexp(logc, axis=1, keepdims=True)
        classes = self.classes
        per = np.stack([logsumexp(logc[:, self.labels == y], axis=1) for y in classes], axis=1)
        return per - total, classes

    def class_grad_scaled(self, x, y: int, a, b) -> np.ndarray:
        """grad_x log p(y | x) = score of the y-sub-mixture minus the full score."""
        return self.conditional(y).score_scaled(x, a, b) - self.score_scaled(x, a, b)

    # VP clock helpers keyed by alpha_bar -------------------------------------

    def log_prob_abar(self, x, abar):
        return self.log_prob_scaled(x, np.sqrt(abar), np.sqrt(1.0 - np.asarray(abar)))

    def score_abar(self, x, abar):
        return self.score_scaled(x, np.sqrt(abar), np.sqrt(1.0 - np.asarray(abar)))

    def eps_abar(self, x, abar):
        abar = np.asarray(abar, dtype=float)
        sig = np.sqrt(1.0 - abar).reshape(-1, 1)
        return -sig * self.score_abar(x, abar)

    def x0_abar(self, x, abar):
        abar = np.asarray(abar, dtype=float)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = abar.reshape(-1, 1)
        return (x + (1.0 - a) * self.score_abar(x, abar)) / np.sqrt(a)


def _abar(t: int, sched: Schedule, lo: int = 0) -> float:
    return float(sched.alpha_bars[sched.check_t(t, lo)])


def _squeeze_like(out: np.ndarray, x):
    return out[0] if np.ndim(x) == 1 else out


def marginal_at(m: GaussianMixture, t: int, sched: Schedule) -> GaussianMixture:
    ab = _abar(t, sched)
    return m.scaled(np.sqrt(ab), np.sqrt(1.0 - ab))


def log_pt(m: GaussianMixture, t: int, sched: Schedule, x):
    out = m.log_prob_abar(x, _abar(t, sched))
    return float(out[0]) if np.ndim(x) == 1 else out


def score(m: GaussianMixture, t: int, sched: Schedule, x):
    ab = _abar(t, sched)
    if ab == 1.0:
        return _squeeze_like(m.score_scaled(x, 1.0, 0.0), x)
    return _squeeze_like(m.score_abar(x, ab), x)


def optimal_eps(m: GaussianMixture, t: int, sched: Schedule, x):
    return _squeeze_like(m.eps_abar(x, _abar(t, sched, lo=1)), x)


def optimal_x0(m: GaussianMixture, t: int, sched: Schedule, x):
    return _squeeze_like(m.x0_abar(x, _abar(t, sched, lo=1)), x)


def class_posterior(m: GaussianMixture, t: int, sched: Schedule, x, y: int | None = None):
    """Posterior over labels and, if ``y`` is given, grad_x log p(y | x).

    Returns ``(probs, classes)`` or ``(probs, classes, grad)``.
    """
    ab = _abar(t, sched)
    a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
    logp, classes = m.class_log_posterior_scaled(x, a, b)
    probs = _squeeze_like(np.exp(logp), x)
    if y is None:
        return probs, classes
    if y not in set(classes.tolist()):
        raise ValueError(f"unknown label {y}")
    return probs, classes, _squeeze_like(m.class_grad_scaled(x, y, a, b), x)
