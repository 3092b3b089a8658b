"""Training-view augmentations for histology patches.

Random-angle rotation, horizontal/vertical flips, RandStainNA-style stain
resampling and color jitter. Solarization is intentionally absent. All random
choices come from a :class:`~pathbench.rng.Rng`, so a view is a pure function
of ``(image, config, seed)``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage
from skimage import color

from .io_utils import atomic_write_text
from .rng import Rng

STAIN_EPS = 1e-6
COLOR_SPACES = ("lab", "hsv")
_SNAP = 1e-9


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def _luma_f(v: np.ndarray) -> np.ndarray:
    return 0.299 * v[..., 0] + 0.587 * v[..., 1] + 0.114 * v[..., 2]


# -- geometry -----------------------------------------------------------------

def rotate(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Counter-clockwise rotation about the image center, same-size output.

    Bilinear sampling with mirror padding. Sample positions within 1e-9 of a
    pixel center are snapped onto it, so multiples of 90 degrees are exact.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    if h != w:
        raise ValueError(f"rotate expects a square image, got {w}x{h}")
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    center = (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - center, yy - center
    src_x = center + dx * c - dy * s
    src_y = center + dx * s + dy * c
    for a in (src_x, src_y):
        r = np.rint(a)
        near = np.abs(a - r) < _SNAP
        a[near] = r[near]
    out = np.empty(img.shape, dtype=np.float64)
    planes = img[..., None] if img.ndim == 2 else img
    out_planes = out[..., None] if img.ndim == 2 else out
    for ch in range(planes.shape[-1]):
        out_planes[..., ch] = ndimage.map_coordinates(
            planes[..., ch].astype(np.float64), [src_y, src_x], order=1, mode="mirror"
        )
    return _to_uint8(out)


def flip(img: np.ndarray, axis: str) -> np.ndarray:
    """Mirror left-right (``"horizontal"``) or top-bottom (``"vertical"``)."""
    if axis == "horizontal":
        return np.ascontiguousarray(np.asarray(img)[:, ::-1])
    if axis == "vertical":
        return np.ascontiguousarray(np.asarray(img)[::-1])
    raise ValueError(f"unknown flip axis {axis!r}")


# -- color jitter ---------------------------------------------------------------

@dataclass(frozen=True)
class JitterParams:
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.1

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} bound must be in [0, 1), got {v}")
        if not 0.0 <= self.hue < 0.5:
            raise ValueError(f"hue bound must be in [0, 0.5), got {self.hue}")


NO_JITTER = JitterParams(0.0, 0.0, 0.0, 0.0)


def _brightness(v, f):
    return np.clip(v * f, 0.0, 255.0)


def _contrast(v, f):
    g = _luma_f(v).mean()
    return np.clip((v - g) * f + g, 0.0, 255.0)


def _saturation(v, f):
    g = _luma_f(v)[..., None]
    return np.clip(g + (v - g) * f, 0.0, 255.0)


def _hue(v, shift):
    hsv = color.rgb2hsv(v / 255.0)
    hsv[..., 0] = np.mod(hsv[..., 0] + shift, 1.0)
    return np.clip(color.hsv2rgb(hsv) * 255.0, 0.0, 255.0)


def jitter_with(img: np.ndarray, f_b: float, f_c: float, f_s: float, d_h: float,
                order=(0, 1, 2, 3)) -> np.ndarray:
    """Apply explicit jitter factors in ``order`` (0=brightness, 1=contrast, 2=saturation, 3=hue)."""
    ops = [(_brightness, f_b, 1.0), (_contrast, f_c, 1.0), (_saturation, f_s, 1.0), (_hue, d_h, 0.0)]
    v = np.asarray(img, dtype=np.float64)
    for i in order:
        fn, arg, neutral = ops[int(i)]
        if arg != neutral:
            v = fn(v, arg)
    return _to_uint8(v)


def color_jitter(img: np.ndarray, p: JitterParams, rng: Rng) -> np.ndarray:
    u = rng.uniform(4)
    f_b = 1.0 + p.brightness * (2.0 * u[0] - 1.0)
    f_c = 1.0 + p.contrast * (2.0 * u[1] - 1.0)
    f_s = 1.0 + p.saturation * (2.0 * u[2] - 1.0)
    d_h = p.hue * (2.0 * u[3] - 1.0)
    order = rng.permutation(4)
    return jitter_with(img, f_b, f_c, f_s, d_h, order)


# -- stain statistics -------------------------------------------------------------

def to_space(img: np.ndarray, space: str) -> np.ndarray:
    """sRGB uint8 -> float LAB (D65) or HSV in channel-native units."""
    if space == "lab":
        return color.rgb2lab(np.asarray(img, dtype=np.uint8))
    if space == "hsv":
        return color.rgb2hsv(np.asarray(img, dtype=np.uint8))
    raise ValueError(f"unknown color space {space!r}")


def from_space(arr: np.ndarray, space: str) -> np.ndarray:
    if space == "lab":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # out-of-gamut clipping warnings
            rgb = color.lab2rgb(arr)
    elif space == "hsv":
        arr = arr.copy()
        arr[..., 0] = np.mod(arr[..., 0], 1.0)
        arr[..., 1:] = np.clip(arr[..., 1:], 0.0, 1.0)
        rgb = color.hsv2rgb(arr)
    else:
        raise ValueError(f"unknown color space {space!r}")
    return _to_uint8(np.clip(rgb, 0.0, 1.0) * 255.0)


def channel_moments(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population std of an ``(..., C)`` array."""
    flat = np.asarray(arr, dtype=np.float64).reshape(-1, np.shape(arr)[-1])
    # shift by the first row so identical rows give exactly zero spread
    d = flat - flat[0]
    return flat[0] + d.mean(axis=0), d.std(axis=0)


def stain_stats(img: np.ndarray, space: str = "lab") -> tuple[np.ndarray, np.ndarray]:
    return channel_moments(to_space(img, space))


@dataclass
class StainTemplate:
    color_space: str
    mean_of_means: np.ndarray
    std_of_means: np.ndarray
    mean_of_stds: np.ndarray
    std_of_stds: np.ndarray
    n_fitted: int = 1
    config_hash: str = ""

    def __post_init__(self):
        if self.color_space not in COLOR_SPACES:
            raise ValueError(f"unknown color space {self.color_space!r}")
        for name in ("mean_of_means", "std_of_means", "mean_of_stds", "std_of_stds"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        if (self.std_of_means < 0).any() or (self.std_of_stds < 0).any() or (self.mean_of_stds < 0).any():
            raise ValueError("template spreads and mean stds must be non-negative")
        if self.n_fitted < 1:
            raise ValueError("n_fitted must be >= 1")

    def to_dict(self) -> dict:
        return {
            "color_space": self.color_space,
            "channels": [
                [float(self.mean_of_means[c]), float(self.std_of_means[c]),
                 float(self.mean_of_stds[c]), float(self.std_of_stds[c])]
                for c in range(3)
            ],
            "n_fitted": self.n_fitted,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StainTemplate":
        ch = np.asarray(d["channels"], dtype=np.float64)
        if ch.shape != (3, 4):
            raise ValueError("template needs 3 channels of [m_mu, s_mu, m_sigma, s_sigma]")
        return cls(d["color_space"], ch[:, 0], ch[:, 1], ch[:, 2], ch[:, 3],
                   int(d.get("n_fitted", 1)), str(d.get("config_hash", "")))

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "StainTemplate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_stain_template(corpus: Iterable[np.ndarray], space: str = "lab") -> StainTemplate:
    """Fit the distribution of per-image channel means and stds over ``corpus``."""
    mus, sigmas = [], []
    for img in corpus:
        mu, sd = stain_stats(img, space)
        mus.append(mu)
        sigmas.append(sd)
    if not mus:
        raise ValueError("empty corpus")
    m_mu, s_mu = channel_moments(np.array(mus))
    m_sigma, s_sigma = channel_moments(np.array(sigmas))
    return StainTemplate(space, m_mu, s_mu, m_sigma, s_sigma, n_fitted=len(mus))


def renormalize(arr: np.ndarray, target_mean, target_std) -> np.ndarray:
    """Shift and scale each channel of ``arr`` to the target moments."""
    mu, sd = channel_moments(arr)
    scale = np.asarray(target_std, dtype=np.float64) / np.maximum(sd, STAIN_EPS)
    return (arr - mu) * scale + np.asarray(target_mean, dtype=np.float64)


def stain_transfer(img: np.ndarray, space: str, target_mean, target_std) -> np.ndarray:
    """Re-normalize each channel of ``img`` to the given mean and std."""
    return from_space(renormalize(to_space(img, space), target_mean, target_std), space)


def randstainna(img: np.ndarray, tpl: StainTemplate, rng: Rng) -> np.ndarray:
    """Transfer ``img`` onto a virtual template sampled from ``tpl``."""
    z = rng.normal(6)
    target_mean = tpl.mean_of_means + tpl.std_of_means * z[:3]
    target_std = np.maximum(tpl.mean_of_stds + tpl.std_of_stds * z[3:], STAIN_EPS)
    return stain_transfer(img, tpl.color_space, target_mean, target_std)


# -- full view ------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    rotate: bool = True
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_stain: float = 0.5
    jitter: JitterParams = field(default_factory=JitterParams)
    template: StainTemplate | None = None

    def __post_init__(self):
        for name in ("p_hflip", "p_vflip", "p_stain"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")


def augment_view(img: np.ndarray, cfg: AugmentConfig, rng: Rng) -> np.ndarray:
    """Rotation, flips, stain resampling, then color jitter.

    Four uniforms are always drawn first, in order: angle, horizontal flip,
    vertical flip, stain gate.
    """
    u_angle, u_h, u_v, u_stain = rng.uniform(4)
    out = np.asarray(img, dtype=np.uint8)
    if out.shape[0] != out.shape[1]:
        raise ValueError("augment_view expects a square image")
    if cfg.rotate:
        out = rotate(out, 360.0 * u_angle)
    if u_h < cfg.p_hflip:
        out = flip(out, "horizontal")
    if u_v < cfg.p_vflip:
        out = flip(out, "vertical")
    if cfg.template is not None and u_stain < cfg.p_stain:
        out = randstainna(out, cfg.template, rng)
    return color_jitter(out, cfg.jitter, rng)
