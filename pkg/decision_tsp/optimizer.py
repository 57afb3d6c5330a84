"""
Adam with bias-corrected moment estimates.
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from decision_tsp.autodiff import ParamStore


@dataclass
class AdamState:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, tensor in params.items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def adam_step(params: ParamStore, state: AdamState) -> None:
    """
    Apply one Adam update in place using the gradients in params.grads.

    The step counter is incremented before the bias corrections are formed.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for name, tensor in params.items():
        grad = params.grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        tensor.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
