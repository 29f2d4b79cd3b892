from dataclasses import dataclass, field
from typing import Dict, Tuple
import logging

import numpy as np

from motionid.nn.layers import Parameter


logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update. Returns new parameter arrays and a new
    state; the inputs are left untouched.
    """
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params[name] = (value - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(value.dtype)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    """
    Adam over a named parameter table. Parameters marked as not trainable are
    skipped and keep their exact bytes.
    """

    def __init__(self, params: Dict[str, Parameter], lr: float = 1e-3):
        assert lr > 0, "Learning rate must be positive"
        self.params = params
        self.lr = lr
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        trainable = {n: p for n, p in self.params.items() if p.trainable}
        updated, self.state = optimizer_step(
            {n: p.data for n, p in trainable.items()},
            {n: p.grad for n, p in trainable.items()},
            self.state,
            self.lr,
        )
        for name, value in updated.items():
            trainable[name].data = value
