"""Slide-level attention-MIL training over frozen patch features."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..embed import Bag
from ..io_utils import config_digest
from ..nn import AttentionMIL, LrSchedule, adamw_state, adamw_step, attention_pool_forward, cosine_lr, mil_loss_and_grads, softmax
from ..rng import Rng
from .metrics import accuracy, auc_macro_ovr, selection_auc
from .report import EvalReport


@dataclass(frozen=True)
class MILConfig:
    epochs: int = 20
    lr: float = 1e-3
    lr_min: float = 0.0
    schedule: str = "constant"  # or "cosine"
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = 32
    seed: int = 0
    n_classes: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.hidden < 1:
            raise ValueError("epochs and hidden must be >= 1")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.lr <= 0 or not 0.0 <= self.lr_min <= self.lr:
            raise ValueError("need lr > 0 and 0 <= lr_min <= lr")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


def predict_proba(model: AttentionMIL, bags: Sequence[Bag]) -> np.ndarray:
    return np.stack([softmax(attention_pool_forward(model, b.instances)[0]) for b in bags])


def _check_bags(bags: Sequence[Bag], name: str, dim: int | None) -> int:
    if not bags:
        raise ValueError(f"{name} split has no bags")
    for b in bags:
        if b.instances.shape[0] == 0:
            raise ValueError(f"bag {b.slide_id!r} is empty")
        if dim is None:
            dim = b.instances.shape[1]
        elif b.instances.shape[1] != dim:
            raise ValueError(f"dim mismatch: bag {b.slide_id!r} has {b.instances.shape[1]}, expected {dim}")
    return dim


def train_mil(bags_train: Sequence[Bag], bags_val: Sequence[Bag], bags_test: Sequence[Bag],
              cfg: MILConfig = MILConfig(), config_hash: str | None = None) -> tuple[AttentionMIL, EvalReport]:
    """AdamW, one bag per step; checkpoint chosen by validation macro AUC."""
    dim = _check_bags(bags_train, "train", None)
    _check_bags(bags_val, "val", dim)
    _check_bags(bags_test, "test", dim)
    ytr = np.array([b.label for b in bags_train])
    yva = np.array([b.label for b in bags_val])
    yte = np.array([b.label for b in bags_test])
    if np.unique(ytr).size < 2:
        raise ValueError("training set has a single class")
    n_classes = cfg.n_classes or int(max(ytr.max(), yva.max(), yte.max())) + 1

    rng = Rng(cfg.seed)
    model = AttentionMIL.init(dim, n_classes, cfg.hidden, rng.spawn(0))
    shuffle_rng = rng.spawn(1)
    params = model.params()
    opt = adamw_state(params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    n = len(bags_train)
    sched = LrSchedule(cfg.lr, cfg.lr_min, cfg.epochs * n)

    best_score, best_epoch, best_model = -np.inf, 1, model.copy()
    losses, val_aucs = [], []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for i in shuffle_rng.permutation(n):
            bag = bags_train[i]
            loss, grads = mil_loss_and_grads(model, bag.instances, bag.label)
            lr = cosine_lr(sched, step) if cfg.schedule == "cosine" else cfg.lr
            adamw_step(opt, params, grads, lr)
            total += loss
            step += 1
        losses.append(total / n)
        score = selection_auc(predict_proba(model, bags_val), yva)
        val_aucs.append(score)
        if not np.isnan(score) and score > best_score:
            best_score, best_epoch, best_model = score, epoch, model.copy()

    probs = predict_proba(best_model, bags_test)
    macro, per_class = auc_macro_ovr(probs, yte, n_classes)
    metrics = {
        "macro_auc": macro,
        "accuracy": accuracy(probs.argmax(axis=1), yte),
    }
    if np.isfinite(best_score):
        metrics["val_macro_auc"] = float(best_score)
    report = EvalReport(
        protocol="mil",
        metrics=metrics,
        best_epoch=best_epoch,
        epochs=cfg.epochs,
        split_sizes={"train": n, "val": len(bags_val), "test": len(bags_test)},
        seed=cfg.seed,
        config_hash=config_hash or config_digest(asdict(cfg)),
        per_class_auc=per_class,
        history={"train_loss": losses, "val_macro_auc": [v if np.isfinite(v) else -1.0 for v in val_aucs]},
    )
    report.validate()
    return best_model, report
