"""Checkpoint files: ``b"PBCK" | u64 header_len | JSON header | float64 LE payload``.

The header lists every stored array (name, shape) in payload order, the model
kind, hyperparameters, seed and step. Optimizer slots are stored as
``opt/<param>/<slot>`` arrays when an :class:`OptState` is supplied.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..io_utils import atomic_write_bytes
from .heads import AttentionMIL, LinearProbe
from .optim import OptState

MAGIC = b"PBCK"
_KINDS = {"linear_probe": LinearProbe, "attention_mil": AttentionMIL}


class CheckpointError(ValueError):
    pass


def _kind_of(model) -> str:
    for kind, cls in _KINDS.items():
        if isinstance(model, cls):
            return kind
    raise TypeError(f"unsupported model {type(model).__name__}")


def encode_checkpoint(model, opt: OptState | None = None, seed: int = 0, step: int = 0,
                      hyper: dict | None = None) -> bytes:
    arrays = [(k, v) for k, v in model.params().items()]
    if opt is not None:
        for pname, slots in opt.slots.items():
            for sname, arr in slots.items():
                arrays.append((f"opt/{pname}/{sname}", arr))
    header = {
        "kind": _kind_of(model),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays],
        "hyperparameters": dict(hyper or {}),
        "seed": int(seed),
        "step": int(step),
        "optimizer": None if opt is None else {"kind": opt.kind, "hyper": opt.hyper, "t": opt.t},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, v in arrays)
    return MAGIC + struct.pack("<Q", len(head)) + head + payload


def decode_checkpoint(data: bytes):
    """Return ``(model, opt_state_or_None, header)``."""
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic")
    if len(data) < 12:
        raise CheckpointError("truncated payload: header incomplete")
    (hlen,) = struct.unpack_from("<Q", data, 4)
    if len(data) < 12 + hlen:
        raise CheckpointError("truncated payload: header incomplete")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
        cls = _KINDS[header["kind"]]
        specs = [(a["name"], tuple(a["shape"])) for a in header["arrays"]]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt header ({exc})") from None
    total = sum(int(np.prod(s)) for _, s in specs)
    expected = 12 + hlen + 8 * total
    if len(data) != expected:
        kind = "truncated payload" if len(data) < expected else "trailing bytes"
        raise CheckpointError(f"{kind}: {len(data)} of {expected} bytes")
    off = 12 + hlen
    arrays = {}
    for name, shape in specs:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    model = cls(**{k: v for k, v in arrays.items() if not k.startswith("opt/")})
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        slots: dict[str, dict[str, np.ndarray]] = {}
        for name, arr in arrays.items():
            if name.startswith("opt/"):
                _, pname, sname = name.split("/", 2)
                slots.setdefault(pname, {})[sname] = arr
        opt = OptState(o["kind"], dict(o["hyper"]), slots, int(o["t"]))
    return model, opt, header


def save_checkpoint(path, model, opt: OptState | None = None, seed: int = 0, step: int = 0,
                    hyper: dict | None = None) -> None:
    atomic_write_bytes(path, encode_checkpoint(model, opt, seed, step, hyper))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
