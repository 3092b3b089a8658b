"""Read access to slide rasters: flat PNG/PPM files and pyramid directories.

A pyramid directory holds ``meta.json``::

    {"id": "slide-1", "levels": [{"file": "L0.png", "width": 8192, "height": 8192}, ...]}

with levels ordered by ascending downsample. Images are ``(H, W, 3)`` uint8
numpy arrays throughout the package.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

FLAT_SUFFIXES = (".png", ".ppm")
META_FILE = "meta.json"
DEFAULT_THUMBNAIL_MAX_DIM = 2048

Image.MAX_IMAGE_PIXELS = None  # slides are large by design


class SlideError(Exception):
    """Raised when a slide cannot be opened or read."""


@dataclass(frozen=True)
class Level:
    width: int
    height: int
    downsample: float


@dataclass(frozen=True, eq=False)
class Slide:
    """An opened slide. Level pixels are decoded lazily and then shared read-only."""

    id: str
    levels: tuple[Level, ...]
    source: Path
    files: tuple[Path, ...]
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def dimensions(self) -> tuple[int, int]:
        return self.levels[0].width, self.levels[0].height

    def level_pixels(self, level: int) -> np.ndarray:
        if not 0 <= level < len(self.levels):
            raise SlideError(f"invalid level index {level} (slide has {len(self.levels)})")
        with self._lock:
            arr = self._cache.get(level)
            if arr is None:
                arr = _decode(self.files[level])
                lv = self.levels[level]
                if arr.shape[:2] != (lv.height, lv.width):
                    raise SlideError(
                        f"{self.files[level]}: image is {arr.shape[1]}x{arr.shape[0]}, "
                        f"metadata says {lv.width}x{lv.height}"
                    )
                arr.setflags(write=False)
                self._cache[level] = arr
        return arr


def _decode(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.array(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise SlideError(f"{path}: not found") from None
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise SlideError(f"{path}: corrupt or unsupported image ({exc})") from None


def _probe_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise SlideError(f"{path}: unsupported format {im.format}")
            return im.size
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise SlideError(f"{path}: corrupt header ({exc})") from None


def open_slide(path) -> Slide:
    """Open a flat raster or a pyramid directory."""
    path = Path(path)
    if not path.exists():
        raise SlideError(f"{path}: not found")
    if path.is_dir():
        return _open_pyramid(path)
    if path.suffix.lower() not in FLAT_SUFFIXES:
        raise SlideError(f"{path}: unsupported format (expected PNG/PPM or pyramid directory)")
    w, h = _probe_size(path)
    return Slide(id=path.stem, levels=(Level(w, h, 1.0),), source=path, files=(path,))


def _open_pyramid(path: Path) -> Slide:
    meta_path = path / META_FILE
    if not meta_path.is_file():
        raise SlideError(f"{path}: missing pyramid metadata file {META_FILE}")
    try:
        meta = json.loads(meta_path.read_text())
        entries = meta["levels"]
        slide_id = str(meta.get("id", path.name))
        dims = [(str(e["file"]), int(e["width"]), int(e["height"])) for e in entries]
    except (ValueError, KeyError, TypeError) as exc:
        raise SlideError(f"{meta_path}: malformed metadata ({exc})") from None
    if not dims:
        raise SlideError(f"{meta_path}: no levels")
    w0 = dims[0][1]
    levels, files = [], []
    for fname, w, h in dims:
        if w < 1 or h < 1:
            raise SlideError(f"{meta_path}: level {fname} has non-positive size")
        f = path / fname
        if not f.is_file():
            raise SlideError(f"{f}: not found")
        levels.append(Level(w, h, w0 / w))
        files.append(f)
    ds = [lv.downsample for lv in levels]
    if any(b < a for a, b in zip(ds, ds[1:])):
        raise SlideError(f"{meta_path}: levels must be ordered by ascending downsample")
    return Slide(id=slide_id, levels=tuple(levels), source=path, files=tuple(files))


def read_region(slide: Slide, level: int, x: int, y: int, w: int, h: int) -> np.ndarray:
    """Copy the ``w``x``h`` rectangle at ``(x, y)`` of ``level``."""
    if w <= 0 or h <= 0:
        raise SlideError(f"empty region {w}x{h}")
    if not 0 <= level < len(slide.levels):
        raise SlideError(f"invalid level index {level} (slide has {len(slide.levels)})")
    lv = slide.levels[level]
    if x < 0 or y < 0 or x + w > lv.width or y + h > lv.height:
        raise SlideError(
            f"region ({x},{y},{w},{h}) out of bounds for level {level} ({lv.width}x{lv.height})"
        )
    return slide.level_pixels(level)[y:y + h, x:x + w].copy()


def thumbnail(slide: Slide, max_dim: int = DEFAULT_THUMBNAIL_MAX_DIM) -> tuple[np.ndarray, float]:
    """Area-averaged thumbnail whose longest side is at most ``max_dim``.

    Returns the image and ``level0_width / thumbnail_width``.
    """
    if max_dim < 16:
        raise ValueError(f"max_dim must be >= 16, got {max_dim}")
    w0, h0 = slide.dimensions
    longest = max(w0, h0)
    if longest <= max_dim:
        out_w, out_h = w0, h0
    elif w0 >= h0:
        out_w, out_h = max_dim, max(1, round(h0 * max_dim / w0))
    else:
        out_w, out_h = max(1, round(w0 * max_dim / h0)), max_dim

    # smallest level that still covers the target size
    src = 0
    for i, lv in enumerate(slide.levels):
        if lv.width >= out_w and lv.height >= out_h:
            src = i
    pixels = slide.level_pixels(src)
    if pixels.shape[:2] != (out_h, out_w):
        pixels = np.asarray(Image.fromarray(pixels).resize((out_w, out_h), Image.Resampling.BOX))
    else:
        pixels = pixels.copy()
    return pixels, w0 / out_w


def find_slides(root) -> list[Path]:
    """Slides under ``root``: the path itself if it is a slide, else its children."""
    root = Path(root)
    if root.is_file() or (root / META_FILE).is_file():
        return [root]
    if not root.is_dir():
        raise SlideError(f"{root}: not found")
    found = []
    for p in sorted(root.iterdir()):
        if p.is_file() and p.suffix.lower() in FLAT_SUFFIXES:
            found.append(p)
        elif p.is_dir() and (p / META_FILE).is_file():
            found.append(p)
    return found


def resolve_slide(root, slide_id: str) -> Path:
    """Locate the slide called ``slide_id`` below ``root``."""
    root = Path(root)
    for cand in [root / slide_id, *(root / f"{slide_id}{s}" for s in FLAT_SUFFIXES)]:
        if cand.is_file() or (cand / META_FILE).is_file():
            return cand
    for p in find_slides(root):
        if p.is_dir() and open_slide(p).id == slide_id:
            return p
    raise SlideError(f"slide {slide_id!r} not found under {root}")
