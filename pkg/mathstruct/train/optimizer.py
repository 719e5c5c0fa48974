from typing import Dict

import numpy as np

from ..nn.params import GradientSet, ParameterSet


class Adam:
    """Adam with bias correction; one state slot per parameter name."""

    def __init__(self, lr: float = 2e-5, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: ParameterSet, grads: GradientSet, lr: float = None) -> None:
        """Update params in place."""
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in params.names():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / c1
            v_hat = v / c2
            params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + self.eps)
