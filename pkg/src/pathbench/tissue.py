"""Otsu tissue masks and foreground patch manifests.

A slide is reduced to a thumbnail, converted to luma, thresholded with Otsu's
method (tissue is darker than glass, so ``luma <= t`` is tissue), and the
non-overlapping patch grid is filtered by the fraction of tissue under each
patch.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .io_utils import TOOL_VERSION, atomic_write_text, config_digest
from .rng import Rng
from .slide_io import DEFAULT_THUMBNAIL_MAX_DIM, Slide, thumbnail

DEFAULT_PATCH_SIZE = 224
DEFAULT_MIN_TISSUE = 0.1


class ManifestError(ValueError):
    pass


def luma(img: np.ndarray) -> np.ndarray:
    """``round(0.299 R + 0.587 G + 0.114 B)`` with halves rounded up, as uint8."""
    rgb = np.asarray(img, dtype=np.int64)
    y = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return y.astype(np.uint8)


def otsu_from_histogram(hist) -> int | None:
    """Otsu threshold over a 256-bin histogram; ``None`` when degenerate.

    Class 0 holds values ``<= t``. The between-class variance is compared as
    the exact rational ``(s0*c1 - s1*c0)**2 / (c0*c1)`` (the common ``1/N**2``
    factor dropped), so ties resolve to the smallest ``t`` without float noise.
    """
    counts = [int(c) for c in hist]
    if len(counts) != 256:
        raise ValueError(f"expected 256 bins, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise ValueError("histogram counts must be non-negative")
    total = sum(counts)
    if total == 0:
        raise ValueError("empty image")
    total_sum = sum(i * c for i, c in enumerate(counts))

    best_t, best_num, best_den = None, 0, 1
    c0 = s0 = 0
    for t in range(255):
        c0 += counts[t]
        s0 += t * counts[t]
        c1 = total - c0
        if c0 == 0 or c1 == 0:
            continue
        s1 = total_sum - s0
        num = (s0 * c1 - s1 * c0) ** 2
        den = c0 * c1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_threshold(gray: np.ndarray) -> int | None:
    gray = np.asarray(gray)
    if gray.size == 0:
        raise ValueError("empty image")
    return otsu_from_histogram(np.bincount(gray.ravel().astype(np.int64), minlength=256))


@dataclass(frozen=True)
class TissueMask:
    bits: np.ndarray  # (H, W) bool at thumbnail resolution
    threshold: int | None  # None marks a degenerate (single-valued) image
    scale_factor: float  # level-0 pixels per mask pixel

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def tissue_mask(gray: np.ndarray, threshold: int | None, scale_factor: float = 1.0) -> TissueMask:
    gray = np.asarray(gray)
    if threshold is None:
        bits = np.zeros(gray.shape, dtype=bool)
    else:
        bits = gray <= threshold
    return TissueMask(bits=bits, threshold=threshold, scale_factor=float(scale_factor))


def tile_grid(width: int, height: int, patch_size: int) -> list[tuple[int, int]]:
    """Top-left corners of full non-overlapping patches, row-major (y, then x)."""
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    nx, ny = width // patch_size, height // patch_size
    return [(i * patch_size, j * patch_size) for j in range(ny) for i in range(nx)]


@dataclass(frozen=True, order=True)
class PatchRecord:
    slide_id: str
    level: int
    x: int
    y: int
    size: int
    tissue_fraction: float = field(compare=False)

    @property
    def key(self) -> str:
        return patch_key(self.level, self.x, self.y)


def patch_key(level: int, x: int, y: int) -> str:
    return f"({level},{x},{y})"


def _footprint(mask: TissueMask, x: float, y: float, size: float, downsample: float):
    s = mask.scale_factor / downsample  # level pixels per mask pixel
    x0, y0 = math.floor(x / s), math.floor(y / s)
    x1, y1 = math.ceil((x + size) / s), math.ceil((y + size) / s)
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, mask.width), min(y1, mask.height)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"patch at ({x},{y}) size {size} lies outside the mask")
    return x0, y0, x1, y1


def patch_tissue_fraction(mask: TissueMask, patch: PatchRecord, downsample: float = 1.0) -> float:
    """Tissue share of the mask pixels under ``patch`` (footprint rounded outward)."""
    x0, y0, x1, y1 = _footprint(mask, patch.x, patch.y, patch.size, downsample)
    window = mask.bits[y0:y1, x0:x1]
    return float(window.sum()) / window.size


@dataclass(frozen=True)
class TilingConfig:
    patch_size: int = DEFAULT_PATCH_SIZE
    min_tissue_fraction: float = DEFAULT_MIN_TISSUE
    thumbnail_max_dim: int = DEFAULT_THUMBNAIL_MAX_DIM
    level: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if not 0.0 <= self.min_tissue_fraction <= 1.0:
            raise ValueError("min_tissue_fraction must be in [0, 1]")
        if self.thumbnail_max_dim < 16:
            raise ValueError("thumbnail_max_dim must be >= 16")
        if self.level < 0:
            raise ValueError("level must be >= 0")

    def digest(self) -> str:
        return config_digest(asdict(self))


@dataclass
class PatchManifest:
    records: list[PatchRecord]
    config_hash: str
    seed: int = 0
    n_grid: int = 0  # candidate grid patches considered, kept or not
    sources: dict[str, str] = field(default_factory=dict)  # slide id -> path

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: (r.slide_id, r.y, r.x, r.level))
        seen = set()
        for r in self.records:
            k = (r.slide_id, r.level, r.x, r.y)
            if k in seen:
                raise ManifestError(f"duplicate patch {k}")
            seen.add(k)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_rejected(self) -> int:
        return self.n_grid - len(self.records)

    def slide_ids(self) -> list[str]:
        return list(dict.fromkeys(r.slide_id for r in self.records))

    def for_slide(self, slide_id: str) -> list[PatchRecord]:
        return [r for r in self.records if r.slide_id == slide_id]


def compute_mask(slide: Slide, max_dim: int = DEFAULT_THUMBNAIL_MAX_DIM) -> TissueMask:
    thumb, scale = thumbnail(slide, max_dim)
    gray = luma(thumb)
    return tissue_mask(gray, otsu_threshold(gray), scale)


def build_manifest(slide: Slide, cfg: TilingConfig | None = None,
                   config_hash: str | None = None) -> PatchManifest:
    """Tile ``slide`` at ``cfg.level`` and keep patches with enough tissue."""
    cfg = cfg or TilingConfig()
    if cfg.level >= len(slide.levels):
        raise ValueError(f"level {cfg.level} not present in slide {slide.id}")
    mask = compute_mask(slide, cfg.thumbnail_max_dim)
    lv = slide.levels[cfg.level]
    grid = tile_grid(lv.width, lv.height, cfg.patch_size)

    # summed-area table: each patch count is four lookups
    sat = np.zeros((mask.height + 1, mask.width + 1), dtype=np.int64)
    sat[1:, 1:] = mask.bits.cumsum(0).cumsum(1)
    records = []
    for x, y in grid:
        x0, y0, x1, y1 = _footprint(mask, x, y, cfg.patch_size, lv.downsample)
        tissue = sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]
        frac = float(tissue) / ((x1 - x0) * (y1 - y0))
        if frac >= cfg.min_tissue_fraction:
            records.append(PatchRecord(slide.id, cfg.level, x, y, cfg.patch_size, frac))
    return PatchManifest(records, config_hash or cfg.digest(), cfg.seed, n_grid=len(grid),
                         sources={slide.id: str(slide.source)})


def merge_manifests(parts: list[PatchManifest]) -> PatchManifest:
    if not parts:
        raise ManifestError("nothing to merge")
    hashes = {m.config_hash for m in parts}
    if len(hashes) != 1:
        raise ManifestError("manifests were produced by different configs")
    return PatchManifest(
        [r for m in parts for r in m.records],
        parts[0].config_hash,
        parts[0].seed,
        n_grid=sum(m.n_grid for m in parts),
        sources={k: v for m in parts for k, v in m.sources.items()},
    )


def sample_unique(manifest: PatchManifest, n: int, seed: int) -> list[PatchRecord]:
    """Seeded uniform sample without replacement; each record appears at most once."""
    if n < 0 or n > len(manifest.records):
        raise ValueError(f"cannot sample {n} of {len(manifest.records)} records")
    order = Rng(seed).permutation(len(manifest.records))[:n]
    return [manifest.records[i] for i in order]


def manifest_to_jsonl(manifest: PatchManifest) -> str:
    header = {
        "config_hash": manifest.config_hash,
        "seed": manifest.seed,
        "n_grid": manifest.n_grid,
        "sources": manifest.sources,
        "version": TOOL_VERSION,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for r in manifest.records:
        lines.append(json.dumps({
            "slide_id": r.slide_id, "level": r.level, "x": r.x, "y": r.y,
            "size": r.size, "tissue_fraction": r.tissue_fraction,
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def write_manifest(manifest: PatchManifest, path) -> None:
    atomic_write_text(path, manifest_to_jsonl(manifest))


def read_manifest(path) -> PatchManifest:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        records = []
        for ln in lines[1:]:
            d = json.loads(ln)
            records.append(PatchRecord(str(d["slide_id"]), int(d["level"]), int(d["x"]),
                                       int(d["y"]), int(d["size"]), float(d["tissue_fraction"])))
        return PatchManifest(records, str(header["config_hash"]), int(header.get("seed", 0)),
                             n_grid=int(header.get("n_grid", len(records))),
                             sources={str(k): str(v) for k, v in header.get("sources", {}).items()})
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from None
