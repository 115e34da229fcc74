"""Gradient-descent optimizers over flat parameter vectors.

All state (moments, step counter) is per-optimizer-instance and
shape-matched to the parameter vector. Steps mutate the parameter array
in place so that any views into it stay valid. A step with non-finite
gradients raises before touching parameters or state.

Default hyperparameters: Adam lr 0.00025, RMSProp lr 0.0001 with lr decay
1e-6 per step. Decay follows the common schedule lr_t = lr / (1 + decay * t)
with t counted from 0 on the first step.
"""
from __future__ import annotations

import numpy as np

from .network import NonFiniteError


class Optimizer:
    """Base: subclasses implement _update(params, grads, lr)."""

    def __init__(self, learning_rate: float, decay: float = 0.0):
        # 0 is allowed as a degenerate no-op optimizer (useful in tests)
        if learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if decay < 0:
            raise ValueError("decay must be non-negative")
        self.learning_rate = float(learning_rate)
        self.decay = float(decay)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> None:
        if params.shape != grads.shape:
            raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
        if not np.isfinite(grads).all():
            raise NonFiniteError("non-finite gradient; step aborted")
        lr = self.learning_rate / (1.0 + self.decay * self.t)
        self.t += 1
        self._update(params, grads, lr)

    def _update(self, params, grads, lr):
        raise NotImplementedError

    # state capture for checkpointing
    def state_dict(self) -> dict:
        return {"t": self.t}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])


class Sgd(Optimizer):
    def __init__(self, learning_rate: float = 0.01, decay: float = 0.0):
        super().__init__(learning_rate, decay)

    def _update(self, params, grads, lr):
        params -= lr * grads


class Adam(Optimizer):
    def __init__(self, learning_rate: float = 0.00025, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, decay: float = 0.0):
        super().__init__(learning_rate, decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = None
        self._v = None

    def _update(self, params, grads, lr):
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
        self._m = self.beta1 * self._m + (1 - self.beta1) * grads
        self._v = self.beta2 * self._v + (1 - self.beta2) * grads * grads
        mhat = self._m / (1 - self.beta1 ** self.t)
        vhat = self._v / (1 - self.beta2 ** self.t)
        params -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t,
                "m": None if self._m is None else self._m.copy(),
                "v": None if self._v is None else self._v.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self._m = None if state["m"] is None else state["m"].copy()
        self._v = None if state["v"] is None else state["v"].copy()


class RmsProp(Optimizer):
    def __init__(self, learning_rate: float = 0.0001, rho: float = 0.9,
                 eps: float = 1e-7, decay: float = 1e-6):
        super().__init__(learning_rate, decay)
        self.rho, self.eps = rho, eps
        self._acc = None

    def _update(self, params, grads, lr):
        if self._acc is None:
            self._acc = np.zeros_like(params)
        self._acc = self.rho * self._acc + (1 - self.rho) * grads * grads
        params -= lr * grads / (np.sqrt(self._acc) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "acc": None if self._acc is None else self._acc.copy()}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self._acc = None if state["acc"] is None else state["acc"].copy()


_ALGORITHMS = {"sgd": Sgd, "adam": Adam, "rmsprop": RmsProp}


def make_optimizer(config: dict) -> Optimizer:
    """Build an optimizer from a config dict like {"algorithm": "adam", ...}."""
    cfg = dict(config)
    algo = cfg.pop("algorithm", None)
    if algo not in _ALGORITHMS:
        raise ValueError(f"unknown optimizer algorithm {algo!r}")
    return _ALGORITHMS[algo](**cfg)
