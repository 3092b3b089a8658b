"""SGD with momentum, decoupled-weight-decay Adam, and cosine annealing.

Steps update the parameter arrays in place, so a model's ``params()`` dict can
be passed straight through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptState:
    kind: str  # "sgd" or "adamw"
    hyper: dict[str, float]
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    t: int = 0


def sgd_state(params: dict[str, np.ndarray], momentum: float = 0.9) -> OptState:
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    slots = {k: {"momentum": np.zeros_like(p)} for k, p in params.items()}
    return OptState("sgd", {"momentum": float(momentum)}, slots)


def adamw_state(params: dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8, weight_decay: float = 0.01) -> OptState:
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("betas must be in [0, 1)")
    slots = {k: {"m": np.zeros_like(p), "v": np.zeros_like(p)} for k, p in params.items()}
    hyper = {"beta1": float(beta1), "beta2": float(beta2), "eps": float(eps),
             "weight_decay": float(weight_decay)}
    return OptState("adamw", hyper, slots)


def _check(state: OptState, params, grads, kind: str) -> None:
    if state.kind != kind:
        raise ValueError(f"expected {kind} state, got {state.kind}")
    for k, p in params.items():
        if k not in state.slots or k not in grads:
            raise ValueError(f"missing slot or gradient for parameter {k!r}")
        if grads[k].shape != p.shape:
            raise ValueError(f"gradient shape {grads[k].shape} != parameter shape {p.shape} for {k!r}")


def sgd_step(state: OptState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
    """``buf = momentum * buf + g``; ``theta -= lr * buf``."""
    _check(state, params, grads, "sgd")
    rho = state.hyper["momentum"]
    state.t += 1
    for k, p in params.items():
        buf = state.slots[k]["momentum"]
        buf *= rho
        buf += grads[k]
        p -= lr * buf


def adamw_step(state: OptState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               lr: float) -> None:
    """Bias-corrected Adam step plus decay ``lr * weight_decay * theta`` applied separately."""
    _check(state, params, grads, "adamw")
    hp = state.hyper
    b1, b2, eps, wd = hp["beta1"], hp["beta2"], hp["eps"], hp["weight_decay"]
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m, v = state.slots[k]["m"], state.slots[k]["v"]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps) + wd * p
        p -= lr * update


@dataclass(frozen=True)
class LrSchedule:
    lr0: float
    lr_min: float = 0.0
    total_steps: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lr_min <= self.lr0:
            raise ValueError("need 0 <= lr_min <= lr0")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


def cosine_lr(s: LrSchedule, t: int) -> float:
    if not 0 <= t <= s.total_steps:
        raise ValueError(f"step {t} outside [0, {s.total_steps}]")
    return s.lr_min + 0.5 * (s.lr0 - s.lr_min) * (1.0 + math.cos(math.pi * t / s.total_steps))
