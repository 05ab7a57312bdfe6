"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, index: tuple, h: float = 1e-5) -> float:
    old = t.data[index]
    with no_grad():
        t.data[index] = old + h
        fp = float(fn().data)
        t.data[index] = old - h
        fm = float(fn().data)
    t.data[index] = old
    return (fp - fm) / (2.0 * h)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise error, relative to the gradient's max magnitude.

    Normalizing by the tensor-wide scale keeps near-zero entries from
    dominating on rounding noise.
    """
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_per_tensor: int | None = None,
    seed: int = 0,
) -> dict:
    """Compare backward() gradients with central differences.

    ``fn`` recomputes a scalar loss from the current contents of ``inputs``.
    With ``max_per_tensor`` set, only that many randomly chosen entries of each
    input are probed. Returns ``{input_index: max_rel_error}``.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    errors = {}
    for i, t in enumerate(inputs):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = list(np.ndindex(t.shape))
        if max_per_tensor is not None and len(flat) > max_per_tensor:
            pick = rng.choice(len(flat), size=max_per_tensor, replace=False)
            flat = [flat[j] for j in sorted(pick)]
        a = np.array([analytic[idx] for idx in flat])
        n = np.array([numerical_grad(fn, t, idx, h) for idx in flat])
        errors[i] = max_rel_error(a, n)
    return errors
