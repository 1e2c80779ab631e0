"""Standard 2-D test distributions."""

from __future__ import annotations

import numpy as np

from .mixture import GaussianMixture


def standard_normal(d: int = 2) -> GaussianMixture:
    return GaussianMixture([1.0], [np.zeros(d)], [1.0], [0])


def two_modes() -> GaussianMixture:
    """Means (-2, 0) with label 0 and (2, 0) with label 1, variance 0.25."""
    return GaussianMixture([0.5, 0.5], [[-2.0, 0.0], [2.0, 0.0]], [0.25, 0.25], [0, 1])


def ring(n: int = 8, radius: float = 4.0, var: float = 0.09) -> GaussianMixture:
    angles = 2.0 * np.pi * np.arange(n) / n
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GaussianMixture(np.full(n, 1.0 / n), means, np.full(n, var), np.arange(n))


FIXTURES = {"a": standard_normal, "b": two_modes, "c": ring}


def get(name: str) -> GaussianMixture:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
