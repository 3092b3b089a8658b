"""Linear probing on frozen features: SGD, cosine annealing, best-val checkpoint."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..io_utils import config_digest
from ..nn import LinearProbe, LrSchedule, cosine_lr, linear_forward, linear_loss_and_grads, sgd_state, sgd_step
from ..rng import Rng
from .metrics import accuracy
from .report import EvalReport


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    lr: float = 0.1
    lr_min: float = 0.0
    momentum: float = 0.9
    batch_size: int = 64
    seed: int = 0
    n_classes: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.lr_min <= self.lr:
            raise ValueError("need 0 <= lr_min <= lr")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def _as_xy(data, name: str):
    x, y = data
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError(f"{name} split is empty")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{name}: {x.shape[0]} rows but {y.shape[0]} labels")
    return x, y


def predict(model: LinearProbe, x) -> np.ndarray:
    return np.argmax(linear_forward(model, x), axis=1)


def train_linear_probe(train, val, test, cfg: ProbeConfig = ProbeConfig(),
                       config_hash: str | None = None) -> tuple[LinearProbe, EvalReport]:
    """Fit a linear classifier on ``(features, labels)`` splits.

    Validation top-1 accuracy is measured after every epoch; the test split is
    scored once, with the earliest epoch that reached the best validation score.
    """
    (xtr, ytr), (xva, yva), (xte, yte) = (_as_xy(train, "train"), _as_xy(val, "val"),
                                          _as_xy(test, "test"))
    dim = xtr.shape[1]
    if xva.shape[1] != dim or xte.shape[1] != dim:
        raise ValueError("dim mismatch between splits")
    n_classes = cfg.n_classes or int(max(ytr.max(), yva.max(), yte.max())) + 1

    rng = Rng(cfg.seed)
    model = LinearProbe.init(dim, n_classes, rng.spawn(0))
    shuffle_rng = rng.spawn(1)
    params = model.params()
    opt = sgd_state(params, cfg.momentum)
    n = xtr.shape[0]
    steps_per_epoch = -(-n // cfg.batch_size)
    sched = LrSchedule(cfg.lr, cfg.lr_min, cfg.epochs * steps_per_epoch)

    best_acc, best_epoch, best_model = -1.0, 0, model.copy()
    losses, val_accs = [], []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads = linear_loss_and_grads(model, xtr[idx], ytr[idx])
            sgd_step(opt, params, grads, cosine_lr(sched, step))
            step += 1
        losses.append(linear_loss_and_grads(model, xtr, ytr)[0])
        acc = accuracy(predict(model, xva), yva)
        val_accs.append(acc)
        if acc > best_acc:
            best_acc, best_epoch, best_model = acc, epoch, model.copy()

    test_acc = accuracy(predict(best_model, xte), yte)
    report = EvalReport(
        protocol="linear_probe",
        metrics={"top1_accuracy": test_acc, "val_top1_accuracy": best_acc},
        best_epoch=best_epoch,
        epochs=cfg.epochs,
        split_sizes={"train": n, "val": int(xva.shape[0]), "test": int(xte.shape[0])},
        seed=cfg.seed,
        config_hash=config_hash or config_digest(asdict(cfg)),
        history={"train_loss": losses, "val_top1_accuracy": val_accs},
    )
    report.validate()
    return best_model, report
