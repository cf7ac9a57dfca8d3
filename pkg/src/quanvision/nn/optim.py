"""Adam with bias-corrected moment estimates."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, StructuralError


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ConfigError(f"betas must lie in (0, 1), got ({beta1}, {beta2})")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[dict[str, np.ndarray]] | None = None
        self.v: list[dict[str, np.ndarray]] | None = None

    def step(self, params: list[dict[str, np.ndarray]], grads: list[dict[str, np.ndarray]]) -> None:
        """Update ``params`` in place; one call per mini-batch."""
        if len(grads) != len(params):
            raise StructuralError(f"{len(grads)} gradient groups for {len(params)} layers")
        for p, g in zip(params, grads):
            if p.keys() != g.keys():
                raise StructuralError(f"gradient keys {sorted(g)} != parameter keys {sorted(p)}")
            for name in p:
                if p[name].shape != g[name].shape:
                    raise StructuralError(
                        f"gradient shape {g[name].shape} != parameter shape {p[name].shape}"
                    )
        if self.m is None:
            self.m = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
            self.v = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for k in p:
                m[k] *= self.beta1
                m[k] += (1.0 - self.beta1) * g[k]
                v[k] *= self.beta2
                v[k] += (1.0 - self.beta2) * (g[k] * g[k])
                p[k] -= self.lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + self.eps)


def adam_step(model, grads, optimizer: Adam):
    """Apply one Adam update to ``model`` and return it."""
    optimizer.step(model.params, grads)
    model.optimizer_state = {"step": optimizer.t}
    return model
