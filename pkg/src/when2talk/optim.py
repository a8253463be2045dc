"""Adam with classic (coupled) weight decay, plus gradient-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameters."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def init(cls, named_params) -> "AdamState":
        state = cls()
        for name, t in named_params:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(
    named_params,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected Adam update in place.

    Weight decay is folded into the gradient (L2 term) before the moment
    updates, so it flows through the adaptive scaling.
    """
    named_params = list(named_params)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape or state.m[name].shape != p.data.shape:
            raise ShapeError(f"adam_step: shape mismatch for '{name}'")
        if weight_decay:
            g = g + weight_decay * p.data
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def global_grad_norm(named_params) -> float:
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def clip_grad_norm(named_params, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``."""
    named_params = list(named_params)
    norm = global_grad_norm(named_params)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def zero_grads(named_params) -> None:
    for _, p in named_params:
        p.grad = None
