"""Discrete noise schedules and their derived per-step quantities.

Arrays are stored with length ``T + 1`` so they can be indexed directly by the
step ``t``. Index 0 holds the clean-data sentinel: beta = 0, alpha_bar = 1,
tilde_beta = 0, snr = inf.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

ONE_MINUS_ABAR_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Schedule:
    betas: np.ndarray  # shape (T + 1,), betas[0] == 0

    def __init__(self, betas):
        b = np.asarray(betas, dtype=float).ravel()
        if b.size < 1:
            raise ValueError("schedule needs at least one step")
        if not np.all((b > 0.0) & (b < 1.0)):
            raise ValueError("every beta must lie in (0, 1)")
        if np.any(np.diff(b) < 0.0):
            raise ValueError("betas must be nondecreasing")
        full = np.concatenate([[0.0], b])
        full.setflags(write=False)
        object.__setattr__(self, "betas", full)

    @property
    def T(self) -> int:
        return self.betas.shape[0] - 1

    @cached_property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @cached_property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @cached_property
    def one_minus_alpha_bars(self) -> np.ndarray:
        # -expm1(sum log1p(-beta)) keeps relative precision when abar is near 1
        out = -np.expm1(np.cumsum(np.log1p(-self.betas)))
        return np.maximum(out, 0.0)

    @cached_property
    def tilde_betas(self) -> np.ndarray:
        omab = self.one_minus_alpha_bars
        out = np.zeros_like(self.betas)
        out[1:] = omab[:-1] / np.maximum(omab[1:], ONE_MINUS_ABAR_FLOOR) * self.betas[1:]
        return out

    @cached_property
    def snrs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.alpha_bars / self.one_minus_alpha_bars

    @cached_property
    def log_snrs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.alpha_bars) - np.log(self.one_minus_alpha_bars)

    def check_t(self, t: int, lo: int = 0) -> int:
        if isinstance(t, (bool, np.bool_)) or int(t) != t:
            raise ValueError(f"time index must be an integer, got {t!r}")
        t = int(t)
        if not lo <= t <= self.T:
            raise ValueError(f"time index {t} outside {lo}..{self.T}")
        return t

    def sqrt_one_minus_abar(self, t) -> np.ndarray:
        return np.sqrt(np.maximum(self.one_minus_alpha_bars[t], ONE_MINUS_ABAR_FLOOR))

    # serialisation -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {"T": self.T, "betas": [float(b) for b in self.betas[1:]]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        betas = d["betas"]
        if "T" in d and int(d["T"]) != len(betas):
            raise ValueError(f"T={d['T']} but {len(betas)} betas given")
        return cls(betas)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, Schedule) and np.array_equal(self.betas, other.betas)

    __hash__ = None

    # continuous bridge -------------------------------------------------------
    # log(abar) is piecewise linear between the knots (t/T, log abar_t), so on
    # each cell beta(u) = -T log(alpha_t) and d(abar)/du = -beta(u) abar(u).

    def _cell(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u < 0.0) | (u > 1.0)):
            raise ValueError("continuous time must lie in [0, 1]")
        pos = u * self.T
        idx = np.clip(np.ceil(pos).astype(int), 1, self.T)
        return pos, idx

    def beta_continuous(self, u):
        _, idx = self._cell(u)
        return -self.T * np.log1p(-self.betas[idx])

    def log_alpha_bar_continuous(self, u):
        pos, idx = self._cell(u)
        log_ab = np.log(self.alpha_bars)
        return log_ab[idx - 1] + (pos - (idx - 1)) * np.log1p(-self.betas[idx])

    def alpha_bar_continuous(self, u):
        return np.exp(self.log_alpha_bar_continuous(u))

    def alpha_bar_dot(self, u):
        return -self.beta_continuous(u) * self.alpha_bar_continuous(u)


def make_linear(T: int, beta_start: float, beta_end: float) -> Schedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return Schedule(np.linspace(beta_start, beta_end, T))


def make_constant(T: int, beta: float) -> Schedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta < 1.0:
        raise ValueError("need 0 < beta < 1")
    return Schedule(np.full(T, float(beta)))


def default_schedule() -> Schedule:
    return make_linear(1000, 1e-4, 0.02)


def subgrid(
    s: Schedule,
    stride: int | None = None,
    indices=None,
    n_steps: int | None = None,
    spacing: str = "uniform",
) -> list[int]:
    """Reduced index grid T = tau_1 > ... > tau_S = 1.

    Exactly one of ``stride``, ``indices`` or ``n_steps`` selects the grid.
    With ``n_steps`` the ``spacing`` may be "uniform" (in t) or "logsnr".
    """
    chosen = [x is not None for x in (stride, indices, n_steps)]
    if sum(chosen) > 1:
        raise ValueError("give only one of stride, indices, n_steps")
    T = s.T
    if indices is not None:
        grid = [int(i) for i in indices]
    elif stride is not None:
        if stride < 1:
            raise ValueError("stride must be >= 1")
        grid = list(range(T, 0, -stride))
        if grid[-1] != 1:
            grid.append(1)
    elif n_steps is not None:
        grid = _n_step_grid(s, int(n_steps), spacing)
    else:
        grid = list(range(T, 0, -1))
    _validate_grid(grid, T)
    return grid


def _n_step_grid(s: Schedule, S: int, spacing: str) -> list[int]:
    T = s.T
    if not 1 <= S <= T:
        raise ValueError(f"n_steps must lie in 1..{T}")
    if S == 1:
        if T != 1:
            raise ValueError("a single-index grid must start and end at T = 1")
        return [1]
    if spacing == "uniform":
        raw = np.linspace(T, 1, S)
    elif spacing == "logsnr":
        ell = s.log_snrs[1:]  # decreasing in t
        targets = np.linspace(ell[-1], ell[0], S)
        # ell is decreasing in t, so interpolate on the reversed arrays
        raw = np.interp(targets, ell[::-1], np.arange(T, 0, -1, dtype=float))
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    grid = [T]
    for r in np.rint(raw[1:-1]).astype(int):
        # keep strictly decreasing while leaving room for the remaining indices
        r = min(r, grid[-1] - 1)
        grid.append(max(r, 2))
    grid.append(1)
    if len(set(grid)) != len(grid) or any(a <= b for a, b in zip(grid, grid[1:])):
        # collisions at the low end: fall back to a dense tail
        grid = sorted(set(grid), reverse=True)
    return grid


def _validate_grid(grid: list[int], T: int) -> None:
    if not grid:
        raise ValueError("grid is empty")
    if grid[0] != T or grid[-1] != 1:
        raise ValueError(f"grid must start at T={T} and end at 1")
    if any(not 1 <= g <= T for g in grid):
        raise ValueError("grid index out of range")
    if any(a <= b for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly decreasing")
