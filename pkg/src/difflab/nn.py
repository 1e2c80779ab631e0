"""Small fully connected network with hand-written backprop and Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .gaussian import as_generator

TIME_FREQS = np.array([0.05, 0.1, 0.2, 0.4, 0.8, 1.6])


def silu(z):
    return z / (1.0 + np.exp(-z))


def silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def time_features(ell: np.ndarray) -> np.ndarray:
    """(sin, cos) embedding of the log-SNR, one row per sample."""
    ell = np.clip(np.asarray(ell, dtype=float).reshape(-1, 1), -30.0, 30.0)
    arg = ell * TIME_FREQS[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


@dataclass
class MLPSpec:
    dim: int
    hidden: int = 128
    depth: int = 3
    n_labels: int = 0  # 0 disables the label embedding
    embed_dim: int = 16

    @property
    def in_dim(self) -> int:
        return self.dim + 2 * TIME_FREQS.size + (self.embed_dim if self.n_labels else 0)

    def shapes(self) -> list[tuple[int, ...]]:
        sizes = [self.in_dim] + [self.hidden] * self.depth + [self.dim]
        out: list[tuple[int, ...]] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            out += [(a, b), (b,)]
        if self.n_labels:
            out.append((self.n_labels + 1, self.embed_dim))  # last row is the null label
        return out


class MLP:
    """x, log-SNR and an optional label map to a d-vector."""

    def __init__(self, spec: MLPSpec, params: list[np.ndarray] | None = None, seed=0):
        self.spec = spec
        if params is None:
            params = self._init(seed)
        if [p.shape for p in params] != spec.shapes():
            raise ValueError("parameter shapes do not match the architecture")
        self.params = [np.array(p, dtype=float) for p in params]

    def _init(self, seed) -> list[np.ndarray]:
        rng = as_generator(seed)
        params = []
        shapes = self.spec.shapes()
        n_dense = 2 * (self.spec.depth + 1)
        for i, shp in enumerate(shapes):
            if i >= n_dense:
                params.append(0.1 * rng.standard_normal(shp))
            elif len(shp) == 2:
                scale = np.sqrt(1.0 / shp[0]) if i < n_dense - 2 else 1e-2 / np.sqrt(shp[0])
                params.append(scale * rng.standard_normal(shp))
            else:
                params.append(np.zeros(shp))
        return params

    # --- flat view -----------------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError("flat parameter vector has the wrong length")
        i = 0
        for p in self.params:
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size

    def copy(self) -> "MLP":
        return MLP(self.spec, [p.copy() for p in self.params])

    # --- forward / backward --------------------------------------------------

    def _labels(self, cond, n: int):
        if not self.spec.n_labels:
            return None
        if cond is None:
            return np.full(n, self.spec.n_labels, dtype=int)
        idx = np.broadcast_to(np.asarray(cond, dtype=int), (n,)).copy()
        idx[idx < 0] = self.spec.n_labels  # negative label means "no condition"
        if np.any(idx > self.spec.n_labels):
            raise ValueError("label index outside the embedding table")
        return idx

    def forward(self, x, ell, cond=None, keep: bool = False):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        parts = [x, time_features(np.broadcast_to(ell, (n,)) if np.ndim(ell) == 0 else ell)]
        lab = self._labels(cond, n)
        if lab is not None:
            parts.append(self.params[-1][lab])
        h = np.concatenate(parts, axis=1)
        acts, pres = [h], []
        L = self.spec.depth + 1
        for layer in range(L):
            W, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ W + b
            if layer < L - 1:
                pres.append(z)
                h = silu(z)
                acts.append(h)
            else:
                h = z
        if keep:
            return h, (acts, pres, lab)
        return h

    def backward(self, cache, grad_out: np.ndarray) -> list[np.ndarray]:
        acts, pres, lab = cache
        grads = [np.zeros_like(p) for p in self.params]
        g = grad_out
        L = self.spec.depth + 1
        for layer in reversed(range(L)):
            W = self.params[2 * layer]
            grads[2 * layer] = acts[layer].T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ W.T
            if layer > 0:
                g = g * silu_grad(pres[layer - 1])
        if lab is not None:
            e = self.spec.embed_dim
            np.add.at(grads[-1], lab, g[:, -e:])
        return grads

    # --- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        s = self.spec
        return {
            "arch": {"dim": s.dim, "hidden": s.hidden, "depth": s.depth, "n_labels": s.n_labels, "embed_dim": s.embed_dim},
            "shapes": [list(p.shape) for p in self.params],
            "weights": [float(v) for v in self.get_flat()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        spec = MLPSpec(**d["arch"])
        if [tuple(s) for s in d["shapes"]] != spec.shapes():
            raise ValueError("checkpoint shapes do not match its architecture")
        m = cls(spec, seed=0)
        m.set_flat(np.asarray(d["weights"], dtype=float))
        return m

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MLP":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.k = 0

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.k += 1
        c1 = 1.0 - self.b1**self.k
        c2 = 1.0 - self.b2**self.k
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class EMA:
    def __init__(self, params: list[np.ndarray], decay: float):
        self.decay = decay
        self.shadow = [p.copy() for p in params]

    def update(self, params: list[np.ndarray]) -> None:
        for s, p in zip(self.shadow, params):
            s *= self.decay
            s += (1.0 - self.decay) * p
