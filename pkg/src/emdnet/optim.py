"""Adam optimizer with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        state = cls(beta1, beta2, epsilon)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One Adam update of ``params`` (name -> Tensor) in place.

    ``grads`` maps the same names to arrays; a missing name counts as a zero
    gradient.  Any non-finite gradient aborts before anything is modified.  A
    non-finite updated parameter also raises; parameters earlier in the
    mapping may already have moved by then.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    t = state.step + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        denom = np.sqrt(v / c2)
        denom += eps
        with np.errstate(over="ignore", invalid="ignore"):
            new = (p.data - (lr / c1) * m / denom).astype(p.dtype, copy=False)
        if not np.all(np.isfinite(new)):
            raise NumericError(f"parameter {name!r} became non-finite at step {t}")
        p.data = new
    state.step = t
