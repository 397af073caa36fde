"""Finite-difference verification of the analytic gradients.

Runs in float64: central differences are unreliable in float32. Exposed
through the command line so any configuration can be audited.
"""

import numpy as np

from .tensor import Tensor, no_grad
from .model import Rescan, RescanConfig, stage_loss

__all__ = ["model_grad_check", "GradCheckReport"]


class GradCheckReport:
    def __init__(self, max_rel_err, n_checked, worst_param):
        self.max_rel_err = max_rel_err
        self.n_checked = n_checked
        self.worst_param = worst_param

    def passed(self, tol=1e-4):
        return self.max_rel_err < tol

    def __str__(self):
        return (f"checked {self.n_checked} parameters, "
                f"max rel err {self.max_rel_err:.3e} (worst: "
                f"{self.worst_param})")


def model_grad_check(config: RescanConfig, n_params=50, seed=0, eps=1e-5,
                     spatial=8, batch=1):
    """Compare backward() against central differences on random parameters."""
    model = Rescan(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    sc = config.scan
    o_data = rng.uniform(0.0, 1.0, (batch, sc.in_channels, spatial, spatial))
    r_data = rng.uniform(-0.2, 0.8, (batch, sc.out_channels, spatial, spatial))
    o = Tensor(o_data, dtype=np.float64)
    r_true = Tensor(r_data, dtype=np.float64)

    def loss_value():
        result = model.forward(o)
        return stage_loss(config.framework, result.stage_streaks,
                          r_true).item()

    params = model.named_parameters()
    for _, p in params:
        p.zero_grad()
    result = model.forward(o)
    loss = stage_loss(config.framework, result.stage_streaks, r_true)
    loss.backward()

    flat = [(name, p) for name, p in params]
    picks = []
    for _ in range(n_params):
        name, p = flat[rng.integers(len(flat))]
        picks.append((name, p, int(rng.integers(p.data.size))))

    max_rel = 0.0
    worst = None
    with no_grad():
        for name, p, j in picks:
            orig = p.data.flat[j]
            p.data.flat[j] = orig + eps
            up = loss_value()
            p.data.flat[j] = orig - eps
            down = loss_value()
            p.data.flat[j] = orig
            fd = (up - down) / (2.0 * eps)
            an = p.grad.flat[j]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            if rel > max_rel:
                max_rel = rel
                worst = f"{name}[{j}]"
    return GradCheckReport(max_rel, len(picks), worst)
