"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

REL_FLOOR = 1e-6


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(op: Callable[..., Tensor], inputs: Sequence[Tensor], seed: int = 0,
                    h: float = 1e-4) -> dict[str, float]:
    """Compare tape gradients of ``sum(op(*inputs) * R)`` against central differences.

    ``R`` is a fixed random projection so every output element contributes.
    Returns the max relative error per input that requires a gradient.
    """
    rng = np.random.default_rng(seed)
    out = op(*inputs)
    proj = rng.standard_normal(out.shape)
    for t in inputs:
        t.grad = None
    out.backward(proj)

    def f():
        return float(np.sum(op(*inputs).data * proj))

    errors = {}
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        num = numeric_grad(f, t.data, h)
        errors[t.name or f"input{i}"] = relative_error(t.grad, num)
    return errors
