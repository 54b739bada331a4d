from __future__ import annotations

import numpy as np

from .nn import ParamStore


def adam_step(store: ParamStore, lr: float = 5e-4, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8, names=None) -> ParamStore:
    """Bias-corrected Adam update applied in place; returns the store."""
    names = list(store.params) if names is None else list(names)
    for name in names:
        if store.params[name].grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    store.t += 1
    b1, b2 = betas
    c1 = 1.0 - b1**store.t
    c2 = 1.0 - b2**store.t
    for name in names:
        p = store.params[name]
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
