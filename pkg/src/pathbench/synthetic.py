"""Deterministic synthetic data: a tissue-like slide, feature blobs, MIL bags."""

from __future__ import annotations

import numpy as np

from .embed import Bag
from .rng import Rng

BACKGROUND_RGB = (236, 234, 238)
# class 1: hematoxylin-rich (dark purple), class 2: eosin-rich (pink)
STAIN_RGB = {1: (104, 56, 142), 2: (196, 96, 156)}
CLASS_NAMES = {1: "purple", 2: "pink"}


def synthetic_slide(size: int = 4096, seed: int = 0, n_blobs: int = 14,
                    cell: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """White slide with elliptical tissue blobs of two stain classes.

    Returns the RGB image and a class map at ``1/cell`` resolution
    (0 = glass, 1 = purple, 2 = pink). Later blobs paint over earlier ones.
    """
    if size % cell or cell % 4:
        raise ValueError("size must be a multiple of cell, and cell a multiple of 4")
    rng = Rng(seed)
    m = size // cell
    yy, xx = np.mgrid[0:m, 0:m].astype(np.float64) + 0.5
    class_map = np.zeros((m, m), dtype=np.uint8)
    params = rng.uniform((n_blobs, 5))
    for k, (u_cx, u_cy, u_rx, u_ry, u_ang) in enumerate(params):
        cx, cy = (0.1 + 0.8 * u_cx) * m, (0.1 + 0.8 * u_cy) * m
        rx, ry = (0.05 + 0.07 * u_rx) * m, (0.05 + 0.07 * u_ry) * m
        ang = np.pi * u_ang
        c, s = np.cos(ang), np.sin(ang)
        dx, dy = xx - cx, yy - cy
        inside = ((dx * c + dy * s) / rx) ** 2 + ((-dx * s + dy * c) / ry) ** 2 <= 1.0
        class_map[inside] = 1 + k % 2

    palette = np.array([BACKGROUND_RGB, STAIN_RGB[1], STAIN_RGB[2]], dtype=np.int16)
    # texture: noise at 1/4 resolution, stronger inside tissue
    tex = size // 4
    up = cell // 4
    tissue_tex = np.repeat(np.repeat(class_map, up, 0), up, 1) > 0
    noise = rng.normal((tex, tex)) * np.where(tissue_tex, 14.0, 3.0)
    noise = np.repeat(np.repeat(np.rint(noise).astype(np.int16), 4, 0), 4, 1)
    img = np.empty((size, size, 3), dtype=np.uint8)
    for ch in range(3):
        base = np.repeat(np.repeat(palette[class_map, ch], cell, 0), cell, 1)
        img[..., ch] = np.clip(base + noise, 0, 255)
    return img, class_map


def patch_class(class_map: np.ndarray, cell: int, x: int, y: int, size: int) -> int:
    """Majority tissue class under a patch (0 if the footprint holds no tissue)."""
    window = class_map[y // cell:-(-(y + size) // cell), x // cell:-(-(x + size) // cell)]
    counts = np.bincount(window.ravel(), minlength=3)[1:]
    return 0 if counts.sum() == 0 else int(np.argmax(counts)) + 1


def gaussian_blobs(n_train: int = 600, n_val: int = 100, n_test: int = 100, dim: int = 64,
                   n_classes: int = 3, separation: float = 6.0, seed: int = 0):
    """Isotropic unit-variance clusters whose centers are ``separation`` apart pairwise."""
    if n_classes > dim:
        raise ValueError("need dim >= n_classes")
    rng = Rng(seed)
    centers = np.zeros((n_classes, dim))
    centers[np.arange(n_classes), np.arange(n_classes)] = separation / np.sqrt(2.0)
    rot = np.linalg.qr(rng.normal((dim, dim)))[0]
    centers = centers @ rot.T

    def draw(n):
        y = np.arange(n) % n_classes
        y = y[rng.permutation(n)]
        return centers[y] + rng.normal((n, dim)), y

    return draw(n_train), draw(n_val), draw(n_test)


def witness_bags(n_bags: int = 200, n_instances: int = 20, dim: int = 32, seed: int = 0,
                 signal_norm: float = 4.0, n_witness: int = 1) -> list[Bag]:
    """Balanced binary bags; positives hide ``n_witness`` signal instances among noise."""
    rng = Rng(seed)
    signal = rng.normal(dim)
    signal *= signal_norm / np.linalg.norm(signal)
    labels = (np.arange(n_bags) % 2)[rng.permutation(n_bags)]
    bags = []
    for i, lab in enumerate(labels):
        inst = rng.normal((n_instances, dim))
        if lab == 1:
            where = rng.permutation(n_instances)[:n_witness]
            inst[where] += signal
        bags.append(Bag(f"bag{i:04d}", inst, int(lab)))
    return bags
