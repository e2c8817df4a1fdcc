"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn.tensor import Tensor


class MissingGrad(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


class Adam:
    """Adam over a fixed, ordered list of parameter tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, state: AdamState | None = None):
        self.params = list(params)
        self.state = state or AdamState(lr, beta1, beta2, eps)
        if not self.state.m:
            self.state.m = [np.zeros_like(p.data) for p in self.params]
            self.state.v = [np.zeros_like(p.data) for p in self.params]
        if len(self.state.m) != len(self.params):
            raise ValueError("optimizer state does not match the parameter list")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)


def adam_step(params: list[Tensor], grads: list, state: AdamState) -> None:
    for i, g in enumerate(grads):
        if g is None:
            name = params[i].name or f"#{i}"
            raise MissingGrad(f"parameter {name} has no gradient")
    st = state
    st.t += 1
    bc1 = 1.0 - st.beta1 ** st.t
    bc2 = 1.0 - st.beta2 ** st.t
    for p, g, m, v in zip(params, grads, st.m, st.v):
        g = np.asarray(g, dtype=np.float32)
        m *= st.beta1
        m += (1.0 - st.beta1) * g
        v *= st.beta2
        v += (1.0 - st.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = (p.data - st.lr * m_hat / (np.sqrt(v_hat) + st.eps)).astype(np.float32)
