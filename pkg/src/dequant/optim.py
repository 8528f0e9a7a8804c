"""Adam optimizer over a ParamStore."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingGradError
from .params import ParamStore


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0


def init_adam(store: ParamStore) -> dict[str, AdamState]:
    return {
        name: AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
        for name, p in store.items()
    }


def adam_step(
    store: ParamStore,
    states: dict[str, AdamState],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update on every parameter, then zero the grads."""
    for name, p in store.items():
        if p.grad is None:
            raise MissingGradError(f"parameter {name!r} has no gradient; run backward() first")
        st = states[name]
        st.t += 1
        g = p.grad
        st.m = beta1 * st.m + (1.0 - beta1) * g
        st.v = beta2 * st.v + (1.0 - beta2) * g * g
        m_hat = st.m / (1.0 - beta1 ** st.t)
        v_hat = st.v / (1.0 - beta2 ** st.t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)
        p.grad[...] = 0
