"""Straight-line interpolants, flow-matching targets and time changes.

The straight-line path is ``z = (1 - rho) x0 + rho * xT`` with ``xT ~ N(0, I)``.
Two clocks are offered: ``linear`` (rho = t) and ``vp`` (rho = sqrt(1 - abar(t))
through the schedule's continuous bridge). Mixture marginals along the path use
the scaling (1 - rho, rho); the VP scaling (sqrt(abar), sqrt(1 - abar)) is only
used when a caller asks for ``clock="vp"``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial.distance import directed_hausdorff

from .gaussian import as_generator
from .mixture import GaussianMixture
from .schedule import Schedule

RHO_MAX = 1.0 - 1e-9


class SingularityError(ValueError):
    """Raised when the straight-line velocity is requested at rho -> 1."""


@dataclass(frozen=True)
class Interpolant:
    kind: str = "linear"
    sched: Schedule | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "vp"):
            raise ValueError(f"unknown interpolant {self.kind!r}")
        if self.kind == "vp" and self.sched is None:
            raise ValueError("the vp interpolant needs a schedule")

    def rho(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return t
        return np.sqrt(-np.expm1(self.sched.log_alpha_bar_continuous(t)))

    def rho_dot(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return np.ones_like(t)
        ab = self.sched.alpha_bar_continuous(t)
        with np.errstate(divide="ignore"):
            return self.sched.beta_continuous(t) * ab / (2.0 * self.rho(t))

    def alpha_bar(self, t):
        """VP noise level that the vp clock attaches to time t."""
        if self.kind != "vp":
            raise ValueError("alpha_bar is only defined for the vp clock")
        return self.sched.alpha_bar_continuous(t)

    def kappa(self, t):
        rho = self.rho(t)
        if np.any(rho >= RHO_MAX):
            raise SingularityError(f"rho(t) = {np.max(rho)!r} is at the singular endpoint")
        return self.rho_dot(t) / (1.0 - rho)


@dataclass(frozen=True)
class PathSample:
    x0: np.ndarray
    xT: np.ndarray
    t: np.ndarray
    z: np.ndarray
    u: np.ndarray


def sample_path(data: GaussianMixture, interp: Interpolant, t, seed, n: int = 1, couple: str = "independent") -> PathSample:
    """Draw endpoints from the coupling and evaluate the path at ``t``.

    ``couple="independent"`` pairs data with fresh N(0, I) noise;
    ``couple="degenerate"`` sets xT = x0.
    """
    rng = as_generator(seed)
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,)).copy()
    if np.any((t < 0.0) | (t > 1.0)):
        raise ValueError("t must lie in [0, 1]")
    x0 = data.sample(rng, n)
    if couple == "independent":
        xT = rng.standard_normal(x0.shape)
    elif couple == "degenerate":
        xT = x0.copy()
    else:
        raise ValueError(f"unknown coupling {couple!r}")
    rho = interp.rho(t)[:, None]
    rdot = interp.rho_dot(t)[:, None]  # infinite at t = 0 on the vp clock
    with np.errstate(invalid="ignore"):
        u = rdot * (xT - x0)
    return PathSample(x0, xT, t, (1.0 - rho) * x0 + rho * xT, u)


def _rows(v, n):
    return np.broadcast_to(np.asarray(v, dtype=float), (n,)).reshape(-1, 1)


def marginal_velocity_straightline(m: GaussianMixture, interp: Interpolant, t, x) -> np.ndarray:
    """u_t(x) = -(rho_dot / (1 - rho)) (x + rho grad log p_t(x))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    rho = _rows(interp.rho(t), n)
    kap = _rows(interp.kappa(t), n)
    s = m.score_scaled(x, 1.0 - rho, rho)
    return -kap * (x + rho * s)


def rectified_velocity(source, interp: Interpolant, t, x, clock: str = "straight") -> np.ndarray:
    """u~_t(x) = -(x - eps_hat(x, t)).

    ``source`` is a GaussianMixture (exact noise posterior) or any object with
    ``eps(x, abar, cond=None)``. With ``clock="straight"`` the state is a point on
    the straight-line path; with ``clock="vp"`` it is a VP state at abar(t).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    rho = _rows(interp.rho(t), n)
    if clock == "straight":
        if isinstance(source, GaussianMixture):
            eps = -rho * source.score_scaled(x, 1.0 - rho, rho)
        else:
            # z = c * x_vp with c^2 = (1 - rho)^2 + rho^2 and abar = (1 - rho)^2 / c^2
            c = np.sqrt((1.0 - rho) ** 2 + rho**2)
            abar = ((1.0 - rho) / c) ** 2
            eps = source.eps(x / c, abar.ravel())
    elif clock == "vp":
        abar = interp.alpha_bar(np.broadcast_to(np.asarray(t, dtype=float), (n,)))
        if isinstance(source, GaussianMixture):
            eps = source.eps_abar(x, abar)
        else:
            eps = source.eps(x, abar)
    else:
        raise ValueError(f"unknown clock {clock!r}")
    return -(x - eps)


def vp_display_velocity(m: GaussianMixture, interp: Interpolant, t, x) -> np.ndarray:
    """The VP-clock expression -(abar_dot / (2 abar)) (x + sqrt(1 - abar) grad log p_t)
    with p_t the VP marginal at abar(t). Kept for the correspondence check."""
    if interp.kind != "vp":
        raise ValueError("needs the vp interpolant")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    tt = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    ab = interp.alpha_bar(tt).reshape(-1, 1)
    ab_dot = interp.sched.alpha_bar_dot(tt).reshape(-1, 1)
    s = m.score_abar(x, ab.ravel())
    return -(ab_dot / (2.0 * ab)) * (x + np.sqrt(1.0 - ab) * s)


@dataclass(frozen=True)
class TimeChange:
    t_grid: np.ndarray
    s_grid: np.ndarray

    def s_of_t(self, t):
        return np.interp(t, self.t_grid, self.s_grid)

    def t_of_s(self, s):
        return np.interp(s, self.s_grid, self.t_grid)


def time_change(kappa, t_grid) -> TimeChange:
    """s(t) = integral of kappa from t_grid[0] by the composite trapezoid rule.

    ``kappa`` is a callable or an array of samples on ``t_grid``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 2 or np.any(np.diff(t_grid) <= 0.0):
        raise ValueError("t_grid must be strictly increasing with at least two points")
    k = np.asarray(kappa(t_grid) if callable(kappa) else kappa, dtype=float)
    if k.shape != t_grid.shape:
        raise ValueError("kappa samples must match the grid")
    if np.any(~(k > 0.0)):
        raise ValueError("kappa must be positive on the grid")
    s = cumulative_trapezoid(k, t_grid, initial=0.0)
    return TimeChange(t_grid, s)


def discrete_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])
