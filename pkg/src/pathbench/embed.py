"""Patch embeddings: a toy encoder, the ``.hemb`` container, and MIL bags.

``.hemb`` layout (little-endian)::

    b"HEMB" | u32 version=1 | u32 dim | u64 n | u64 key_block_len
    | key block: UTF-8 JSON array of n key strings
    | n*dim float32, row-major

An optional ``<stem>.json`` sidecar next to the file records the slide id,
encoder settings and the config hash of the run that wrote it. Any external
encoder that writes this layout can feed the probe and MIL protocols.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np

from .io_utils import atomic_write_bytes, atomic_write_text
from .rng import Rng
from .tissue import PatchManifest

MAGIC = b"HEMB"
VERSION = 1
_HEADER = struct.Struct("<4sIIQQ")
TOY_GRID = 16
TOY_FEATURES = 6 + TOY_GRID * TOY_GRID


class EmbeddingFormatError(ValueError):
    pass


class BagAssemblyError(ValueError):
    pass


@dataclass
class EmbeddingSet:
    slide_id: str
    keys: list[str]
    matrix: np.ndarray  # (n, dim) float32

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise ValueError("matrix must be 2-D with dim >= 1")
        if len(self.keys) != self.matrix.shape[0]:
            raise ValueError(f"{len(self.keys)} keys for {self.matrix.shape[0]} rows")
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("embedding keys must be unique")
        if not np.isfinite(self.matrix).all():
            raise ValueError("embedding values must be finite")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, key: str) -> int:
        return self._index()[key]

    def _index(self) -> dict[str, int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {k: i for i, k in enumerate(self.keys)}
            self.__dict__["_idx"] = idx
        return idx


# -- toy encoder ------------------------------------------------------------------

def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of overlap fractions (box filter)."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def toy_features(patch: np.ndarray) -> np.ndarray:
    """Channel means and stds plus a 16x16 area-averaged luma grid, all /255."""
    rgb = np.asarray(patch, dtype=np.float64)
    flat = rgb.reshape(-1, 3)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    h, w = y.shape
    grid = _area_matrix(h, TOY_GRID) @ y @ _area_matrix(w, TOY_GRID).T
    return np.concatenate([flat.mean(0), flat.std(0), grid.ravel()]) / 255.0


@lru_cache(maxsize=16)
def _projection(seed: int, dim: int) -> np.ndarray:
    m = Rng(seed).normal((dim, TOY_FEATURES)) / np.sqrt(TOY_FEATURES)
    m.setflags(write=False)
    return m


def toy_encode(patch: np.ndarray, seed: int, dim: int) -> np.ndarray:
    """Fixed random projection of :func:`toy_features`; stands in for a real encoder."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return _projection(int(seed), int(dim)) @ toy_features(patch)


# -- file format ------------------------------------------------------------------

def encode_embeddings(es: EmbeddingSet) -> bytes:
    keys = json.dumps(list(es.keys), ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    n, dim = es.matrix.shape
    payload = np.ascontiguousarray(es.matrix, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, dim, n, len(keys)) + keys + payload


def decode_embeddings(data: bytes, slide_id: str) -> EmbeddingSet:
    if len(data) < 4 or data[:4] != MAGIC:
        raise EmbeddingFormatError("bad magic")
    if len(data) < _HEADER.size:
        raise EmbeddingFormatError("truncated payload: header incomplete")
    _, version, dim, n, klen = _HEADER.unpack_from(data)
    if version != VERSION:
        raise EmbeddingFormatError(f"version mismatch: file has {version}, reader supports {VERSION}")
    if dim < 1:
        raise EmbeddingFormatError("dim must be >= 1")
    expected = _HEADER.size + klen + 4 * n * dim
    if len(data) < expected:
        raise EmbeddingFormatError(f"truncated payload: {len(data)} of {expected} bytes")
    if len(data) > expected:
        raise EmbeddingFormatError(f"trailing bytes: {len(data)} vs {expected} expected")
    try:
        keys = json.loads(data[_HEADER.size:_HEADER.size + klen].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise EmbeddingFormatError(f"corrupt key block ({exc})") from None
    if not isinstance(keys, list) or len(keys) != n:
        got = len(keys) if isinstance(keys, list) else "non-list"
        raise EmbeddingFormatError(f"key-count mismatch: {got} keys for {n} rows")
    matrix = np.frombuffer(data, dtype="<f4", count=n * dim, offset=_HEADER.size + klen)
    try:
        return EmbeddingSet(slide_id, [str(k) for k in keys], matrix.reshape(n, dim).astype(np.float32))
    except ValueError as exc:
        raise EmbeddingFormatError(str(exc)) from None


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_embeddings(es: EmbeddingSet, path, meta: dict | None = None) -> None:
    """Write ``es`` to ``path``; ``meta`` (if given) goes to the JSON sidecar."""
    atomic_write_bytes(path, encode_embeddings(es))
    if meta is not None:
        side = {"slide_id": es.slide_id, "dim": es.dim, "n": len(es.keys), **meta}
        atomic_write_text(sidecar_path(path), json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_embeddings(path, slide_id: str | None = None) -> EmbeddingSet:
    """Read a ``.hemb`` file. The slide id comes from the sidecar, else the file stem."""
    path = Path(path)
    if slide_id is None:
        side = sidecar_path(path)
        if side.is_file():
            slide_id = str(json.loads(side.read_text()).get("slide_id", path.stem))
        else:
            slide_id = path.stem
    return decode_embeddings(path.read_bytes(), slide_id)


def read_embedding_dir(root) -> dict[str, EmbeddingSet]:
    out = {}
    for p in sorted(Path(root).glob("*.hemb")):
        es = read_embeddings(p)
        if es.slide_id in out:
            raise EmbeddingFormatError(f"slide {es.slide_id!r} appears in more than one file")
        out[es.slide_id] = es
    return out


# -- bags ---------------------------------------------------------------------------

@dataclass
class Bag:
    slide_id: str
    instances: np.ndarray  # (n, dim) float64
    label: int

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float64)
        if self.instances.ndim != 2 or self.instances.shape[0] < 1:
            raise ValueError(f"bag {self.slide_id!r} must hold at least one instance")


def assemble_bags(manifest: PatchManifest, embeddings: Mapping[str, EmbeddingSet],
                  labels: Mapping[str, int]) -> list[Bag]:
    """One bag per manifest slide, rows in manifest order, features widened to float64."""
    bags, dim = [], None
    for sid in manifest.slide_ids():
        if sid not in embeddings:
            raise BagAssemblyError(f"no embeddings for slide {sid!r}")
        if sid not in labels:
            raise BagAssemblyError(f"no label for slide {sid!r}")
        es = embeddings[sid]
        if dim is None:
            dim = es.dim
        elif es.dim != dim:
            raise BagAssemblyError(f"dim mismatch: slide {sid!r} has {es.dim}, expected {dim}")
        rows = []
        for rec in manifest.for_slide(sid):
            try:
                rows.append(es.row(rec.key))
            except KeyError:
                raise BagAssemblyError(f"slide {sid!r} has no embedding for key {rec.key}") from None
        bags.append(Bag(sid, es.matrix[rows].astype(np.float64), int(labels[sid])))
    return bags


def bag_from_embeddings(es: EmbeddingSet, label: int) -> Bag:
    """Whole-file bag: every stored row is an instance."""
    return Bag(es.slide_id, es.matrix.astype(np.float64), int(label))
