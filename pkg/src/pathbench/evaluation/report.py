"""Evaluation reports and their canonical JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..io_utils import TOOL_VERSION, atomic_write_text, canonical_json

PROTOCOLS = ("linear_probe", "mil")


class ReportError(ValueError):
    pass


@dataclass
class EvalReport:
    protocol: str
    metrics: dict[str, float]
    best_epoch: int
    epochs: int
    split_sizes: dict[str, int]
    seed: int
    config_hash: str
    per_class_auc: list[float] | None = None
    history: dict[str, list[float]] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ReportError(f"unknown protocol {self.protocol!r}")
        if not isinstance(self.metrics, dict) or not self.metrics:
            raise ReportError("report needs a non-empty metrics map")
        for k, v in self.metrics.items():
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ReportError(f"metric {k} = {v!r} is not in [0, 1]")
        if self.per_class_auc is not None:
            for v in self.per_class_auc:
                if not 0.0 <= v <= 1.0:
                    raise ReportError(f"per-class AUC {v!r} is not in [0, 1]")
        if not 1 <= self.best_epoch <= self.epochs:
            raise ReportError(f"best_epoch {self.best_epoch} outside 1..{self.epochs}")
        if not self.config_hash:
            raise ReportError("missing config_hash")

    def to_dict(self) -> dict:
        d = {
            "protocol": self.protocol,
            "metrics": dict(self.metrics),
            "best_epoch": self.best_epoch,
            "epochs": self.epochs,
            "split_sizes": dict(self.split_sizes),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "history": {k: list(v) for k, v in self.history.items()},
            "version": TOOL_VERSION,
        }
        if self.per_class_auc is not None:
            d["per_class_auc"] = list(self.per_class_auc)
        if self.extra:
            d["extra"] = dict(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if "metrics" not in d:
            raise ReportError("report needs a non-empty metrics map")
        try:
            rep = cls(
                protocol=d["protocol"], metrics=dict(d["metrics"]), best_epoch=int(d["best_epoch"]),
                epochs=int(d["epochs"]), split_sizes=dict(d["split_sizes"]), seed=int(d["seed"]),
                config_hash=str(d["config_hash"]), per_class_auc=d.get("per_class_auc"),
                history=dict(d.get("history", {})), extra=dict(d.get("extra", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ReportError(f"malformed report ({exc})") from None
        rep.validate()
        return rep


def render_report(report: EvalReport) -> str:
    report.validate()
    return canonical_json(report.to_dict())


def emit_report(report: EvalReport, path) -> None:
    atomic_write_text(path, render_report(report))


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
