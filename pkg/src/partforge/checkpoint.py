"""Checkpoint files: a JSON header followed by a flat float32 payload.

Layout::

    b"PFCK" | uint32 LE header length | header JSON (utf-8) | payload

The header lists every array by name and shape in payload order. Model
parameters come first; Adam moments follow as ``adam.m.<name>`` and
``adam.v.<name>`` when optimizer state is saved.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import Denoiser, config_from_dict
from .errors import ParseError, ShapeError
from .tensor import Tensor

MAGIC = b"PFCK"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: Denoiser
    seed: int
    step: int
    optimizer: dict | None = None  # {"t", "lr", "beta1", "beta2", "eps", "m": {...}, "v": {...}}
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, model: Denoiser, seed: int, step: int, optimizer=None, extra: dict | None = None) -> Path:
    names = list(model.params)
    arrays = [model.params[n].data for n in names]
    entries = [[n, list(a.shape)] for n, a in zip(names, arrays)]
    opt_header = None
    if optimizer is not None:
        opt_header = {"type": "adam", "t": optimizer.t, "lr": optimizer.lr, "beta1": optimizer.beta1,
                      "beta2": optimizer.beta2, "eps": optimizer.eps}
        for kind, store in (("m", optimizer.m), ("v", optimizer.v)):
            for n in names:
                entries.append([f"adam.{kind}.{n}", list(store[n].shape)])
                arrays.append(store[n])
    header = {
        "format": "partforge-checkpoint",
        "version": FORMAT_VERSION,
        "dtype": "<f4",
        "config": model.config.to_dict(),
        "seed": int(seed),
        "step": int(step),
        "optimizer": opt_header,
        "arrays": entries,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + payload)
    return path


def read_header(data: bytes) -> tuple[dict, int]:
    if len(data) < 8 or data[:4] != MAGIC:
        raise ParseError("not a partforge checkpoint", 0)
    (hlen,) = struct.unpack_from("<I", data, 4)
    if 8 + hlen > len(data):
        raise ParseError("truncated checkpoint header", 4)
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}", 8) from exc
    return header, 8 + hlen


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    header, pos = read_header(data)
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * count
        if end > len(data):
            raise ParseError(f"payload truncated while reading {name}", pos)
        arrays[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos = end
    if pos != len(data):
        raise ParseError(f"{len(data) - pos} trailing bytes after payload", pos)
    cfg = config_from_dict(header["config"])
    params = {n: Tensor(a, requires_grad=True, name=n) for n, a in arrays.items() if not n.startswith("adam.")}
    model = Denoiser(cfg, params)
    opt = None
    if header.get("optimizer"):
        opt = dict(header["optimizer"])
        try:
            opt["m"] = {n: arrays[f"adam.m.{n}"] for n in model.params}
            opt["v"] = {n: arrays[f"adam.v.{n}"] for n in model.params}
        except KeyError as exc:
            raise ShapeError(f"optimizer state missing {exc}") from exc
    return Checkpoint(model, header["seed"], header["step"], opt, header.get("extra", {}))
