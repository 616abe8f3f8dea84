"""Transformer building blocks on the autodiff tape.

Weights are passed as a mapping ``name -> Tensor`` and looked up by prefix.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

Weights = Mapping[str, Tensor]


def linear(x, w: Weights, prefix: str, bias: bool = True) -> Tensor:
    y = ad.matmul(x, w[f"{prefix}.w"])
    return y + w[f"{prefix}.b"] if bias else y


def mlp(x, w: Weights, prefix: str) -> Tensor:
    h = ad.gelu(ad.matmul(x, w[f"{prefix}.w1"]) + w[f"{prefix}.b1"])
    return ad.matmul(h, w[f"{prefix}.w2"]) + w[f"{prefix}.b2"]


def self_attention(x, w: Weights, prefix: str, heads: int) -> Tensor:
    """Multi-head self-attention over the token axis of a (B, T, D) tensor."""
    b, t, d = x.shape
    dh = d // heads

    def split(name):
        y = ad.matmul(x, w[f"{prefix}.w{name}"]) + w[f"{prefix}.b{name}"]
        return y.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)

    q, k, v = split("q"), split("k"), split("v")
    scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    att = ad.softmax(scores, axis=-1)
    o = ad.matmul(att, v).transpose(0, 2, 1, 3).reshape(b, t, d)
    return ad.matmul(o, w[f"{prefix}.wo"]) + w[f"{prefix}.bo"]


def block(x, w: Weights, prefix: str, heads: int) -> Tensor:
    """Pre-norm residual block: attention then a GELU MLP."""
    h = ad.layer_norm(x, w[f"{prefix}.ln1.g"], w[f"{prefix}.ln1.b"])
    x = x + self_attention(h, w, f"{prefix}.attn", heads)
    h = ad.layer_norm(x, w[f"{prefix}.ln2.g"], w[f"{prefix}.ln2.b"])
    return x + mlp(h, w, f"{prefix}.mlp")


def as_weight_tensors(weights: Mapping[str, np.ndarray], track: bool = False) -> dict[str, Tensor]:
    """Wrap arrays as tensors; ``track=True`` makes them leaves on the active tape."""
    return {k: Tensor(v, requires_grad=track) for k, v in weights.items()}
