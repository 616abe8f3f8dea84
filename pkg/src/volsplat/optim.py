"""Adam with decoupled weight decay and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError


@dataclass
class OptimState:
    """First and second moments per parameter name plus the step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "OptimState":
        return cls({k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
                   {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}, 0)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        out["step"] = np.array(float(self.step))
        return out

    @classmethod
    def from_tensors(cls, t: Mapping[str, np.ndarray]) -> "OptimState":
        m = {k[2:]: np.array(a) for k, a in t.items() if k.startswith("m/")}
        v = {k[2:]: np.array(a) for k, a in t.items() if k.startswith("v/")}
        return cls(m, v, int(t["step"]))


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimState,
              lr, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
    """One AdamW update; returns ``(new_params, new_state)`` without mutating inputs.

    ``lr`` is a float or a per-name mapping.  Parameters with no gradient
    entry get a zero gradient (moments still decay).
    """
    b1, b2 = betas
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p):
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter {np.shape(p)}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != np.shape(p) or v.shape != np.shape(p):
            raise ContractError(f"optimizer moments for {name!r} do not match the parameter shape")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        rate = lr[name] if isinstance(lr, Mapping) else lr
        upd = p - rate * mhat / (np.sqrt(vhat) + eps)
        if weight_decay:
            upd = upd - rate * weight_decay * p
        new_p[name], new_m[name], new_v[name] = upd, m, v
    return new_p, OptimState(new_m, new_v, t)


def cosine_lr(step: int, total: int, lr_max: float = 1e-4, lr_min: float = 1e-6) -> float:
    """Cosine annealing from ``lr_max`` at step 0 to ``lr_min`` at ``total``."""
    if total <= 0:
        return lr_max
    frac = min(max(step / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))
