"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor, freeze_kinks

ZERO_GRAD_FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ZERO_GRAD_FLOOR) -> float:
    """||a - n|| / max(||a||, ||n||, floor); the floor handles gradients that are exactly zero."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(loss_fn: Callable[[], float], param: Tensor, h: float = 1e-4) -> np.ndarray:
    out = np.zeros_like(param.data)
    for idx in np.ndindex(param.shape):
        orig = param.data[idx]
        param.data[idx] = orig + h
        plus = loss_fn()
        param.data[idx] = orig - h
        minus = loss_fn()
        param.data[idx] = orig
        out[idx] = (plus - minus) / (2.0 * h)
    return out


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-4,
) -> dict[str, float]:
    """Relative error of backprop against central differences for each named tensor.

    Leaky-ReLU branches are frozen at the evaluation point so that a perturbation
    crossing a kink does not corrupt the difference quotient.
    """
    with freeze_kinks() as tape:
        for p in params.values():
            p.grad = None
        loss = loss_fn()
        loss.backward()
        tape.replay()
        scalar = lambda: float(loss_fn().data)  # noqa: E731
        return {
            name: relative_error(p.grad if p.grad is not None else np.zeros_like(p.data),
                                 numeric_grad(scalar, p, h))
            for name, p in params.items()
        }
