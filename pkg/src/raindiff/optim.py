"""Adam optimizer over a flat parameter vector."""

from __future__ import annotations

import numpy as np


class Adam:
    """Classic Adam with bias correction, updating a flat float64 vector in place.

    All intermediate arrays are preallocated; step() performs no heap
    allocation, which matters because the trainers call it hundreds of
    thousands of times on six-figure parameter vectors.
    """

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.99, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self._scratch = np.empty(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """params <- params - lr * m_hat / (sqrt(v_hat) + eps)."""
        self.t += 1
        s = self._scratch
        self.m *= self.beta1
        np.multiply(grad, 1.0 - self.beta1, out=s)
        self.m += s
        self.v *= self.beta2
        np.multiply(grad, grad, out=s)
        s *= 1.0 - self.beta2
        self.v += s
        np.sqrt(self.v, out=s)
        s /= np.sqrt(1.0 - self.beta2 ** self.t)
        s += self.eps
        np.divide(self.m, s, out=s)
        s *= self.lr / (1.0 - self.beta1 ** self.t)
        params -= s
