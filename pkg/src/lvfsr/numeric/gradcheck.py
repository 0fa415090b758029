"""Central-difference gradient verification.

A builder constructs named float64 parameters and a forward closure; the
closure is re-evaluated around each parameter entry. Comparison is the
symmetric relative error |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

The forward closure may accept a ``changed`` keyword naming the parameter
perturbed for the current evaluation. Deep builders use it to resume from
cached activations of unaffected layers; the hint never alters the value,
only how much of it is recomputed.
"""

from __future__ import annotations

import inspect
from typing import Callable, Dict, Tuple

import numpy as np

from .tensor import Tensor, backward, set_finite_checks

Builder = Callable[[int], Tuple[Dict[str, Tensor], Callable[..., Tensor]]]


def grad_check(builder: Builder, seed: int = 0, eps: float = 1e-4) -> float:
    params, forward = builder(seed)
    for p in params.values():
        if p.data.dtype != np.float64:
            p.data = p.data.astype(np.float64)
    takes_hint = "changed" in inspect.signature(forward).parameters

    loss = forward()
    if loss.requires_grad:
        analytic = backward(loss)
    else:
        analytic = {}

    # finite differences run un-taped on the same parameter arrays; a fresh
    # base evaluation refreshes any builder-held caches with untracked tensors
    for p in params.values():
        p.requires_grad = False
    set_finite_checks(False)
    try:
        forward()
        max_err = 0.0
        for name, p in params.items():
            ga = analytic[name].data.reshape(-1) if name in analytic else None
            flat = p.data.reshape(-1)
            kwargs = {"changed": name} if takes_hint else {}
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                f_hi = float(forward(**kwargs).data)
                flat[idx] = orig - eps
                f_lo = float(forward(**kwargs).data)
                flat[idx] = orig
                numeric = (f_hi - f_lo) / (2.0 * eps)
                exact = 0.0 if ga is None else float(ga[idx])
                err = abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric))
                if err > max_err:
                    max_err = err
    finally:
        set_finite_checks(True)
        for p in params.values():
            p.requires_grad = True
    return max_err
