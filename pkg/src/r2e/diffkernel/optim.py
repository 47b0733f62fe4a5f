"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParameterSet


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


class AdamW:
    """Single-owner optimizer state; one training loop mutates it."""

    def __init__(self, params: ParameterSet, config: AdamWConfig = AdamWConfig()):
        self.config = config
        self.step_count = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, params: ParameterSet, grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch for {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            # Decoupled decay: multiplicative shrink, independent of g.
            if cfg.weight_decay:
                p.data *= 1.0 - cfg.lr * cfg.weight_decay
            p.data -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


def adamw_step(params: ParameterSet, grads: dict[str, np.ndarray],
               state: AdamW) -> tuple[ParameterSet, AdamW]:
    """Functional alias over AdamW.step; mutates and returns both."""
    state.step(params, grads)
    return params, state
