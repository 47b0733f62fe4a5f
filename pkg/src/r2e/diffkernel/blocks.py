"""Shared attention building blocks used by the encoder and the scorer."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .params import Init, ONES, ZEROS, ParameterSet


def affine(x: T.Tensor, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.add(T.matmul(x, w), b)


def scaled_init(fan_in: int) -> Init:
    """Fan-in-scaled normal init; keeps per-unit variance O(1) at any width."""
    return Init("normal", fan_in ** -0.5)


def add_attention_params(params: ParameterSet, prefix: str, hidden: int,
                         rng: np.random.Generator) -> None:
    # No key bias: a per-key constant shift cancels inside the softmax,
    # leaving an unidentifiable parameter with a structurally zero gradient.
    init = scaled_init(hidden)
    for name in ("wq", "wv", "wo"):
        params.add(f"{prefix}.{name}", (hidden, hidden), init, rng)
        params.add(f"{prefix}.{name}_b", (hidden,), ZEROS, rng)
    params.add(f"{prefix}.wk", (hidden, hidden), init, rng)


def add_layer_norm_params(params: ParameterSet, prefix: str,
                          shape: tuple[int, ...], rng: np.random.Generator) -> None:
    params.add(f"{prefix}.gain", shape, ONES, rng)
    params.add(f"{prefix}.shift", shape, ZEROS, rng)


def layer_norm(params: ParameterSet, prefix: str, x: T.Tensor,
               n_axes: int = 1, eps: float = 1e-5) -> T.Tensor:
    return T.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.shift"],
                        n_axes=n_axes, eps=eps)


def _split_heads(x: T.Tensor, heads: int) -> T.Tensor:
    b, n, h = x.shape
    x = T.reshape(x, (b, n, heads, h // heads))
    return T.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: T.Tensor) -> T.Tensor:
    b, heads, n, dh = x.shape
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (b, n, heads * dh))


def multihead_attention(params: ParameterSet, prefix: str, queries: T.Tensor,
                        keys_values: T.Tensor, heads: int,
                        additive_mask: np.ndarray | None = None) -> T.Tensor:
    """Scaled dot-product attention; queries [B,nq,h], keys_values [B,nk,h].

    additive_mask, if given, broadcasts against [B, heads, nq, nk]; padding
    positions carry MASK_FILL so their weights underflow to exactly zero.
    """
    hidden = queries.shape[-1]
    dh = hidden // heads
    q = _split_heads(affine(queries, params[f"{prefix}.wq"], params[f"{prefix}.wq_b"]), heads)
    k = _split_heads(T.matmul(keys_values, params[f"{prefix}.wk"]), heads)
    v = _split_heads(affine(keys_values, params[f"{prefix}.wv"], params[f"{prefix}.wv_b"]), heads)
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if additive_mask is not None:
        scores = T.add(scores, T.as_tensor(additive_mask))
    attn = T.softmax(scores, axis=-1)
    mixed = _merge_heads(T.matmul(attn, v))
    return affine(mixed, params[f"{prefix}.wo"], params[f"{prefix}.wo_b"])


def add_ffn_params(params: ParameterSet, prefix: str, hidden: int,
                   intermediate: int, rng: np.random.Generator) -> None:
    params.add(f"{prefix}.w1", (hidden, intermediate), scaled_init(hidden), rng)
    params.add(f"{prefix}.b1", (intermediate,), ZEROS, rng)
    params.add(f"{prefix}.w2", (intermediate, hidden), scaled_init(intermediate), rng)
    params.add(f"{prefix}.b2", (hidden,), ZEROS, rng)


def ffn(params: ParameterSet, prefix: str, x: T.Tensor) -> T.Tensor:
    hid = T.gelu(affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return affine(hid, params[f"{prefix}.w2"], params[f"{prefix}.b2"])
