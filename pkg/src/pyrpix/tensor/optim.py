"""RMSprop over a name -> Tensor parameter registry."""
from __future__ import annotations

from typing import Mapping, MutableMapping, Optional

import numpy as np

from pyrpix.tensor.core import Tensor


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str, batch: Optional[int]):
        where = f" at batch {batch}" if batch is not None else ""
        super().__init__(f"non-finite gradient for parameter {name!r}{where}")
        self.name = name
        self.batch = batch


def rmsprop_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: MutableMapping[str, np.ndarray],
    lr: float,
    decay: float = 0.9,
    epsilon: float = 1e-8,
    batch: Optional[int] = None,
) -> None:
    """One in-place RMSprop update.

    acc <- decay*acc + (1-decay)*g^2 ;  p <- p - lr*g/sqrt(acc+eps).
    Every gradient is checked before anything is written, so a bad batch
    leaves parameters and state untouched.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name, batch)
    for name, g in grads.items():
        p = params[name]
        acc = state.get(name)
        if acc is None:
            acc = np.zeros_like(p.data)
        acc = decay * acc + (1.0 - decay) * (g * g)
        state[name] = acc
        p.data = p.data - lr * g / np.sqrt(acc + epsilon)


class RMSprop:
    def __init__(self, params: Mapping[str, Tensor], lr: float, decay: float = 0.9, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.decay = decay
        self.epsilon = epsilon
        self.state: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, batch: Optional[int] = None) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        rmsprop_step(self.params, grads, self.state, self.lr, self.decay, self.epsilon, batch)
