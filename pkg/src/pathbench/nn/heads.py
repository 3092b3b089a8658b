"""Linear and gated-attention MIL heads with hand-written gradients (float64)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import Rng


def _uniform_init(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if labels.shape[0] != b:
        raise ValueError(f"{labels.shape[0]} labels for batch of {b}")
    if (labels < 0).any() or (labels >= c).any():
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / b


@dataclass
class LinearProbe:
    W: np.ndarray  # (n_classes, dim)
    b: np.ndarray  # (n_classes,)

    @classmethod
    def init(cls, dim: int, n_classes: int, rng: Rng) -> "LinearProbe":
        return cls(_uniform_init(rng, (n_classes, dim), dim), np.zeros(n_classes))

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def copy(self) -> "LinearProbe":
        return LinearProbe(self.W.copy(), self.b.copy())


def linear_forward(m: LinearProbe, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != m.dim:
        raise ValueError(f"input dim {x.shape[1]} does not match probe dim {m.dim}")
    return x @ m.W.T + m.b


def linear_backward(x: np.ndarray, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return {"W": dlogits.T @ x, "b": dlogits.sum(axis=0)}


def linear_loss_and_grads(m: LinearProbe, x, labels) -> tuple[float, dict[str, np.ndarray]]:
    loss, dlogits = softmax_xent(linear_forward(m, x), labels)
    return loss, linear_backward(x, dlogits)


@dataclass
class AttentionMIL:
    """Gated attention pooling: ``a = softmax(w . (tanh(V h) * sigmoid(U h)))``."""

    V: np.ndarray  # (hidden, dim)
    U: np.ndarray  # (hidden, dim)
    w: np.ndarray  # (hidden,)
    Wc: np.ndarray  # (n_classes, dim)
    bc: np.ndarray  # (n_classes,)

    @classmethod
    def init(cls, dim: int, n_classes: int, hidden: int, rng: Rng) -> "AttentionMIL":
        if hidden < 1:
            raise ValueError("hidden must be >= 1")
        return cls(
            V=_uniform_init(rng, (hidden, dim), dim),
            U=_uniform_init(rng, (hidden, dim), dim),
            w=_uniform_init(rng, (hidden,), hidden),
            Wc=_uniform_init(rng, (n_classes, dim), dim),
            bc=np.zeros(n_classes),
        )

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    @property
    def hidden(self) -> int:
        return self.V.shape[0]

    @property
    def n_classes(self) -> int:
        return self.Wc.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"V": self.V, "U": self.U, "w": self.w, "Wc": self.Wc, "bc": self.bc}

    def copy(self) -> "AttentionMIL":
        return AttentionMIL(**{k: v.copy() for k, v in self.params().items()})


@dataclass
class AttentionCache:
    bag: np.ndarray
    tanh_a: np.ndarray
    sig_b: np.ndarray
    gated: np.ndarray
    scores: np.ndarray
    attn: np.ndarray
    pooled: np.ndarray
    model: AttentionMIL


def attention_pool_forward(m: AttentionMIL, bag: np.ndarray) -> tuple[np.ndarray, AttentionCache]:
    """Logits ``(n_classes,)`` for one bag ``(n, dim)`` plus the backward cache."""
    h = np.asarray(bag, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("bag must be (n, dim) with n >= 1")
    if h.shape[1] != m.dim:
        raise ValueError(f"bag dim {h.shape[1]} does not match model dim {m.dim}")
    t = np.tanh(h @ m.V.T)
    s = _sigmoid(h @ m.U.T)
    g = t * s
    e = g @ m.w
    a = softmax(e)
    z = a @ h
    logits = m.Wc @ z + m.bc
    return logits, AttentionCache(h, t, s, g, e, a, z, m)


def attention_pool_backward(cache: AttentionCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    m, h, a = cache.model, cache.bag, cache.attn
    dlogits = np.asarray(dlogits, dtype=np.float64).reshape(-1)
    d_wc = np.outer(dlogits, cache.pooled)
    d_z = m.Wc.T @ dlogits
    d_a = h @ d_z
    d_e = a * (d_a - a @ d_a)
    d_w = cache.gated.T @ d_e
    d_g = np.outer(d_e, m.w)
    d_pre_v = d_g * cache.sig_b * (1.0 - cache.tanh_a ** 2)
    d_pre_u = d_g * cache.tanh_a * cache.sig_b * (1.0 - cache.sig_b)
    return {"V": d_pre_v.T @ h, "U": d_pre_u.T @ h, "w": d_w, "Wc": d_wc, "bc": dlogits.copy()}


def mil_loss_and_grads(m: AttentionMIL, bag, label: int) -> tuple[float, dict[str, np.ndarray]]:
    logits, cache = attention_pool_forward(m, bag)
    loss, dlogits = softmax_xent(logits[None, :], [label])
    return loss, attention_pool_backward(cache, dlogits[0])
