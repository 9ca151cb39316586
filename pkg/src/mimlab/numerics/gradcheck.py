"""Central-finite-difference verification of recorded backward rules."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import NumericsError, Tensor, no_grad


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be a scalar-valued function of `x` alone (other tensors it
    closes over are held fixed). Per coordinate the error is
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12); the max over
    (optionally subsampled) coordinates is returned.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    y = f(probe)
    if y.size != 1:
        raise NumericsError("finite_diff_check requires a scalar-valued function")
    y.backward()
    analytic = probe.grad
    if analytic is None:
        analytic = np.zeros_like(probe.data)

    flat = x.data.reshape(-1).copy()
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        coords = np.random.Generator(np.random.PCG64(seed)).choice(
            flat.size, size=max_coords, replace=False
        )

    worst = 0.0
    base = flat.copy()
    for i in coords:
        for sign in (+1.0, -1.0):
            base[i] = flat[i] + sign * eps
            with no_grad():
                val = f(Tensor(base.reshape(x.shape), dtype=x.data.dtype)).item()
            if not np.isfinite(val):
                raise NumericsError("finite_diff_check: non-finite evaluation")
            if sign > 0:
                plus = val
            else:
                minus = val
        base[i] = flat[i]
        numeric = (plus - minus) / (2.0 * eps)
        a = float(analytic.reshape(-1)[i])
        err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
        if err > worst:
            worst = err
    return worst
