"""ADAM optimizer over named network parameters."""

import numpy as np

__all__ = ["Adam", "NonFiniteGradient"]


class NonFiniteGradient(RuntimeError):
    """A gradient contained NaN or infinity; training must stop."""


class Adam:
    """Standard ADAM with bias correction.

    Defaults beta1=0.9, beta2=0.999, eps=1e-8. Moment buffers live per
    parameter; the step counter is shared and strictly increasing.
    """

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for (name, p), m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(
                    f"non-finite gradient in '{name}' at step {self.t}: "
                    f"|g|max={np.abs(g[np.isfinite(g)]).max(initial=0.0):g}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
