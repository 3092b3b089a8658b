"""Small file helpers shared by every artifact writer."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

TOOL_VERSION = "0.1.0"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def config_digest(obj) -> str:
    """SHA-256 over the compact sorted-key JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r} cannot be serialized")
    if x == 0.0:
        x = 0.0  # drop negative zero
    return format(x, "#.6g")


def canonical_json(obj, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, floats with 6 significant digits."""

    def enc(v, depth: int) -> str:
        pad = " " * (indent * (depth + 1))
        end = " " * (indent * depth)
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if v is None:
            return "null"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return _fmt_float(float(v))
        if isinstance(v, str):
            return json.dumps(v, ensure_ascii=False)
        if isinstance(v, dict):
            if not v:
                return "{}"
            items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {enc(v[k], depth + 1)}"
                     for k in sorted(v, key=str)]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(v, (list, tuple, np.ndarray)):
            seq = list(v)
            if not seq:
                return "[]"
            return "[" + ", ".join(enc(x, depth + 1) for x in seq) + "]"
        raise TypeError(f"cannot serialize {type(v).__name__}")

    return enc(obj, 0) + "\n"
