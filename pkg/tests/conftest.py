from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from PIL import Image


def brute_otsu(hist):
    """Direct evaluation of w0*w1*(mu0-mu1)^2 in exact rationals for every t."""
    n = sum(hist)
    best_t, best = None, Fraction(0)
    for t in range(256):
        c0 = sum(hist[: t + 1])
        c1 = n - c0
        if c0 == 0 or c1 == 0:
            continue
        mu0 = Fraction(sum(i * hist[i] for i in range(t + 1)), c0)
        mu1 = Fraction(sum(i * hist[i] for i in range(t + 1, 256)), c1)
        var = Fraction(c0, n) * Fraction(c1, n) * (mu0 - mu1) ** 2
        if var > best:
            best_t, best = t, var
    return best_t


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = Fraction(0)
    for p, q in product(pos, neg):
        total += 1 if p > q else Fraction(1, 2) if p == q else 0
    return total / (len(pos) * len(neg))


@pytest.fixture
def write_png(tmp_path):
    def _write(arr, name="img.png"):
        path = tmp_path / name
        Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)
        return path

    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
