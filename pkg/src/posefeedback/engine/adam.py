"""Adam optimizer with bias correction."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure(self, params):
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        elif len(self.m) != len(params):
            raise ValueError("optimizer state was built for a different parameter list")


def adam_step(params, grads, state, lr):
    """Apply one in-place Adam update to ``params`` (tensors) from ``grads``.

    Zero gradients leave parameters unchanged, since the first moment stays
    zero for them.
    """
    if not lr >= 0:
        raise ValueError("learning rate must be non-negative")
    state.ensure(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.value.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
