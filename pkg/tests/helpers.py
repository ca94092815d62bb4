"""Shared oracles for the test suite: central finite differences and error norms."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from forgetbench.autograd import Tape, Tensor, backward


def finite_difference(fn: Callable[[], float], params: Sequence[Tensor],
                      h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradients of a scalar function of the given tensors."""
    grads = []
    for p in params:
        grad = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            f_plus = fn()
            flat[i] = original - h
            f_minus = fn()
            flat[i] = original
            grad_flat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(grad)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    if scale < 1e-7:
        # Both effectively zero: below the noise floor of central differences.
        return 0.0
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_gradients(make_loss: Callable[[], Tensor], params: Sequence[Tensor],
                    tol: float = 1e-4, h: float = 1e-5) -> None:
    """Assert the taped gradients match finite differences for every parameter."""
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = make_loss()
    backward(loss, tape)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = finite_difference(lambda: float(make_loss().data), params, h=h)
    for i, (got, expected) in enumerate(zip(analytic, numeric)):
        err = relative_error(got, expected)
        assert err < tol, f"param {i}: gradient error {err:.3e} >= {tol}"
    for p in params:
        p.grad = None
