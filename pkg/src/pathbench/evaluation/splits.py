"""Seeded train/val/test partitioning.

Each split gets ``floor(n * ratio)`` items; the (at most two) leftovers go one
each to train, then val. Stratified mode applies the rule per class.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..rng import Rng

SLIDE_RATIOS = (0.8, 0.1, 0.1)


@dataclass
class Split:
    train: list[int]
    val: list[int]
    test: list[int]
    seed: int
    ratios: tuple[float, float, float]

    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train), "val": len(self.val), "test": len(self.test)}


def _exact(r) -> Fraction:
    # decimal reading of the float: 0.29 means 29/100, not its binary neighbour
    return Fraction(repr(float(r)))


def split_sizes(n: int, ratios) -> tuple[int, int, int]:
    fr = [_exact(r) for r in ratios]
    if len(fr) != 3 or any(f < 0 for f in fr):
        raise ValueError("need three non-negative ratios")
    if sum(fr) != 1:
        raise ValueError(f"ratios must sum to 1, got {float(sum(fr))}")
    sizes = [int(n * f) for f in fr]  # floor: n * f >= 0
    left = n - sum(sizes)
    for i in range(left):
        sizes[i % 2] += 1
    return sizes[0], sizes[1], sizes[2]


def split_dataset(labels, ratios=SLIDE_RATIOS, seed: int = 0, stratify: bool = True,
                  n_classes: int | None = None) -> Split:
    """Partition item indices ``0..len(labels)-1``."""
    labels = np.asarray(labels).reshape(-1)
    n = labels.size
    if n == 0:
        raise ValueError("empty dataset")
    rng = Rng(seed)
    if stratify:
        classes = range(n_classes) if n_classes is not None else np.unique(labels)
        groups = []
        for c in classes:
            idx = np.flatnonzero(labels == c)
            if idx.size == 0:
                raise ValueError(f"class {c} has no items; cannot stratify")
            groups.append(idx)
    else:
        groups = [np.arange(n)]
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for idx in groups:
        idx = idx[rng.permutation(idx.size)]
        a, b, _ = split_sizes(idx.size, ratios)
        parts[0].extend(idx[:a].tolist())
        parts[1].extend(idx[a:a + b].tolist())
        parts[2].extend(idx[a + b:].tolist())
    return Split(sorted(parts[0]), sorted(parts[1]), sorted(parts[2]), seed,
                 tuple(float(r) for r in ratios))


def holdout_val(n: int, frac: float = 0.1, seed: int = 0) -> tuple[list[int], list[int]]:
    """Carve ``max(1, floor(n * frac))`` validation items out of ``n`` training items."""
    if not 0.0 < frac < 1.0:
        raise ValueError("frac must be in (0, 1)")
    if n < 2:
        raise ValueError("need at least two items to hold out a validation set")
    n_val = max(1, int(n * _exact(frac)))
    perm = Rng(seed).permutation(n)
    return sorted(perm[n_val:].tolist()), sorted(perm[:n_val].tolist())
