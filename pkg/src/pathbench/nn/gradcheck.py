"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .heads import AttentionMIL, LinearProbe, linear_loss_and_grads, mil_loss_and_grads

FD_STEP = 1e-5
# Below this magnitude relative error is measured against the floor instead,
# so entries that are truly ~0 do not blow up the ratio.
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def check_gradients(loss_fn: Callable[[], float], params: dict[str, np.ndarray],
                    analytic: dict[str, np.ndarray], tol: float = 1e-4,
                    step: float = FD_STEP) -> GradCheckReport:
    """Perturb every entry of ``params`` in place and compare with ``analytic``."""
    worst, worst_name, worst_idx, count = 0.0, "", (), 0
    for name, p in params.items():
        g = analytic[name]
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = loss_fn()
            p[idx] = orig - step
            down = loss_fn()
            p[idx] = orig
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(numeric), abs(g[idx]), REL_FLOOR)
            rel = abs(numeric - g[idx]) / denom
            count += 1
            if rel > worst:
                worst, worst_name, worst_idx = rel, name, idx
    return GradCheckReport(worst, worst_name, worst_idx, count, tol)


def grad_check(model, inputs, labels, tol: float = 1e-4) -> GradCheckReport:
    """Check a :class:`LinearProbe` on a batch or an :class:`AttentionMIL` on one bag."""
    if isinstance(model, LinearProbe):
        def fn():
            return linear_loss_and_grads(model, inputs, labels)
    elif isinstance(model, AttentionMIL):
        label = int(np.asarray(labels).reshape(-1)[0])

        def fn():
            return mil_loss_and_grads(model, inputs, label)
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    params = model.params()
    for p in params.values():
        if p.dtype != np.float64:
            raise TypeError("gradient checks need float64 parameters")
    _, analytic = fn()
    return check_gradients(lambda: fn()[0], params, analytic, tol)
