"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, backward


def _numeric_grad(build, t: Tensor, eps: float) -> np.ndarray:
    """Central differences of the scalar ``build()`` w.r.t. every entry of ``t``."""
    grad = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = build().item()
        flat[i] = orig - eps
        lo = build().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    diff = np.abs(analytic - numeric) / denom
    return float(diff.max()) if diff.size else 0.0


def grad_check(build, params, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and finite differences.

    ``build`` recomputes the scalar loss from the current parameter data, so
    it is re-evaluated at every perturbed point. Use 64-bit parameters.
    """
    return max(grad_check_groups(build, params, eps).values(), default=0.0)


def grad_check_groups(build, params, eps: float = 1e-5) -> dict[str, float]:
    """Per-parameter-group max relative error (group = prefix before '.')."""
    params = list(params)
    with Tape():
        loss = build()
        backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params}
    errors: dict[str, float] = {}
    for name, t in params:
        numeric = _numeric_grad(build, t, eps)
        group = name.split(".")[0]
        err = _rel_error(analytic[name], numeric)
        errors[group] = max(errors.get(group, 0.0), err)
    return errors
