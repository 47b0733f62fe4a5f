"""Run composed primitive graphs: forward, backward, finite-difference check.

A graph is a callable  fn(params: ParameterSet, inputs: dict[str, Tensor])
-> dict[str, Tensor]  composed from the primitives in tensor.py.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .params import ParameterSet

GraphFn = Callable[[ParameterSet, dict[str, T.Tensor]], dict[str, T.Tensor]]


def _wrap_inputs(inputs: dict) -> dict[str, T.Tensor]:
    out = {}
    for name, value in inputs.items():
        out[name] = value if isinstance(value, T.Tensor) else T.Tensor(value)
    return out


def forward(graph: GraphFn, params: ParameterSet, inputs: dict) -> dict[str, np.ndarray]:
    """Evaluate the graph without taping; returns detached arrays."""
    with T.no_grad():
        outs = graph(params, _wrap_inputs(inputs))
    return {name: t.data for name, t in outs.items()}


def backward(graph: GraphFn, params: ParameterSet, inputs: dict,
             loss: str = "loss") -> dict[str, np.ndarray]:
    """Run forward + backprop from the named scalar output; returns grads."""
    params.zero_grads()
    outs = graph(params, _wrap_inputs(inputs))
    if loss not in outs:
        raise KeyError(f"graph has no output {loss!r}")
    T.backward(outs[loss])
    grads = params.grads()
    for g in grads.values():
        if not np.isfinite(g).all():
            raise T.NonFiniteError("gradient contains non-finite values")
    return grads


def loss_and_grads(graph: GraphFn, params: ParameterSet, inputs: dict,
                   loss: str = "loss") -> tuple[float, dict[str, np.ndarray]]:
    """One taped forward + backward; returns the pre-step loss and gradients."""
    params.zero_grads()
    outs = graph(params, _wrap_inputs(inputs))
    value = float(outs[loss].data)
    T.backward(outs[loss])
    return value, params.grads()


def gradient_check(graph: GraphFn, params: ParameterSet, inputs: dict,
                   loss: str = "loss", step: float = 1e-5,
                   max_entries_per_param: int | None = None,
                   seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
    When max_entries_per_param is set, a seeded random subset of entries per
    parameter is checked instead of every entry.
    """
    if params.dtype != np.float64:
        raise ValueError("gradient_check requires 64-bit parameters")
    analytic = backward(graph, params, inputs, loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            idxs = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idxs = np.arange(n)
        aflat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            hi = forward(graph, params, inputs)[loss]
            flat[i] = orig - step
            lo = forward(graph, params, inputs)[loss]
            flat[i] = orig
            numeric = float((hi - lo) / (2.0 * step))
            a = float(aflat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
