"""Whole-slide tiling, histology augmentation and frozen-feature benchmarks."""

from .io_utils import TOOL_VERSION as __version__
from .rng import Rng

__all__ = ["Rng", "__version__"]
