"""Minimal first-order optimizers over named numpy arrays (updated in place)."""

from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, name: str, param: np.ndarray, grad: np.ndarray, mask=None) -> None:
        if mask is None:
            param -= self.lr * grad
        else:
            param[mask] -= self.lr * grad[mask]


class Adam:
    """Adam with per-parameter step counters.

    ``mask`` (broadcastable to the leading axes of ``param``) restricts the
    update, and the moment estimates, to the selected entries; everything
    else is left untouched.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, np.ndarray] = {}

    def _slot(self, name, param, mask):
        if name not in self._m:
            self._m[name] = np.zeros_like(param)
            self._v[name] = np.zeros_like(param)
            shape = param.shape if mask is None else np.shape(mask)
            self._t[name] = np.zeros(shape, dtype=np.int64)
        return self._m[name], self._v[name], self._t[name]

    def step(self, name: str, param: np.ndarray, grad: np.ndarray, mask=None) -> None:
        m, v, t = self._slot(name, param, mask)
        b1, b2 = self.beta1, self.beta2
        if mask is None:
            t += 1
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            param -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            return
        if not np.any(mask):
            return
        t[mask] += 1
        g = grad[mask]
        m[mask] = b1 * m[mask] + (1 - b1) * g
        v[mask] = b2 * v[mask] + (1 - b2) * g * g
        tt = t[mask].reshape(t[mask].shape + (1,) * (g.ndim - 1))
        mhat = m[mask] / (1 - b1 ** tt)
        vhat = v[mask] / (1 - b2 ** tt)
        param[mask] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, lr: float):
    name = name.lower()
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")
