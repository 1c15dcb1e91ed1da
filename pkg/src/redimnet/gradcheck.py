"""Central finite-difference check of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               tolerance: float | None = None, stencil: int = 2) -> float:
    """Compare ``backward`` against central differences, coordinate by coordinate.

    ``fn(*inputs)`` must return a scalar tensor and be a pure function of the
    input data.  Returns the maximum over all coordinates of
    ``|analytic - numeric| / max(1e-12, |analytic| + |numeric|)``.  When a
    ``tolerance`` is given an ``AssertionError`` is raised if it is exceeded.

    ``stencil`` is 2 (``(f(x+h) - f(x-h)) / 2h``) or 4 (the fourth-order
    five-point rule), which tolerates a larger ``eps`` and so less roundoff.
    """
    if stencil not in (2, 4):
        raise ValueError(f"stencil must be 2 or 4, got {stencil}")
    # (k, w): numeric = sum_k w * (f(x + k h) - f(x - k h)) / h; differencing each
    # symmetric pair first keeps the result exactly 0 when f does not move
    pairs = ((1, 0.5),) if stencil == 2 else ((2, -1 / 12), (1, 8 / 12))
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = fn(*inputs)
    if out.size != 1:
        raise NumericError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: function value is not finite at the base point")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        num = np.empty(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            total = 0.0
            for step, w in pairs:
                flat[i] = orig + step * eps
                hi = float(fn(*inputs).data)
                flat[i] = orig - step * eps
                lo = float(fn(*inputs).data)
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    flat[i] = orig
                    idx = np.unravel_index(i, t.shape)
                    raise NumericError(f"grad_check: non-finite function value at input {k}, coordinate {idx}")
                total += w * (hi - lo)
            flat[i] = orig
            num[i] = total / eps
        a = analytic[k].reshape(-1).astype(np.float64)
        err = np.abs(a - num) / np.maximum(1e-12, np.abs(a) + np.abs(num))
        if err.size:
            worst = max(worst, float(err.max()))
    if tolerance is not None and worst > tolerance:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e} > {tolerance:.1e}")
    return worst


def randomize_parameters(module, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Overwrite every parameter with ``scale * N(0, 1)`` draws.

    Zero-initialized residual outputs make every upstream gradient exactly
    zero, which a relative-error check cannot distinguish from noise.
    """
    for p in module.parameters():
        p.data = (scale * rng.standard_normal(p.shape)).astype(p.dtype)


def check_module(module, x, rng: np.random.Generator, eps: float = 1e-4, params: bool = True,
                 tolerance: float | None = None, stencil: int = 2) -> float:
    """Grad-check ``sum(module(x) * R)`` for a fixed random readout ``R``.

    Inputs and (optionally) every parameter of ``module`` are checked.
    """
    xt = Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)
    with np.errstate(all="ignore"):
        probe = module(xt)
    readout = rng.standard_normal(probe.shape)

    def fn(inp, *_):
        return (module(inp) * readout).sum()

    inputs = [xt] + (list(module.parameters()) if params else [])
    return grad_check(fn, inputs, eps=eps, tolerance=tolerance, stencil=stencil)
