"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"EMD1"  u32 version
    u32 image_size  u32 base_channels  u32 r  u8 skip_connections
    u32 n_tensors, then per tensor:
        u32 name_len, name (utf-8), u8 itemsize (4 or 8),
        u32 rank, u32 extents[rank], raw little-endian float data
    u64 adam_step  f64 beta1  f64 beta2  f64 epsilon
    u32 len, training config text (utf-8)
    u32 len, extra JSON (utf-8, sorted keys)

Tensor names are prefixed ``param/``, ``bn.mean/``, ``bn.var/``,
``adam.m/`` and ``adam.v/``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import FormatError
from .model import ArchConfig, EMDModel
from .ops import BatchNormState
from .optim import AdamState
from .tensor import Tensor

MAGIC = b"EMD1"
VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


@dataclass
class Checkpoint:
    model: EMDModel
    adam_state: AdamState
    cfg: TrainConfig
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.model, self.adam_state, self.cfg))


def _tensor_table(model: EMDModel, adam: AdamState):
    for name, p in model.params.items():
        yield "param/" + name, p.data
    for name, s in model.bn.items():
        yield "bn.mean/" + name, s.mean
        yield "bn.var/" + name, s.var
    for name in model.params:
        if name in adam.m:
            yield "adam.m/" + name, adam.m[name]
            yield "adam.v/" + name, adam.v[name]


def dumps(model: EMDModel, adam: AdamState, cfg: TrainConfig, extra: dict | None = None) -> bytes:
    a = model.arch
    out = [MAGIC, struct.pack("<I", VERSION),
           struct.pack("<IIIB", a.image_size, a.base_channels, a.r, int(a.skip_connections))]
    table = list(_tensor_table(model, adam))
    out.append(struct.pack("<I", len(table)))
    for name, arr in table:
        arr = np.asarray(arr)
        if arr.dtype.itemsize not in _DTYPES or arr.dtype.kind != "f":
            raise FormatError(f"cannot serialize {name} with dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<BI", arr.dtype.itemsize, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[arr.dtype.itemsize]).tobytes())
    out.append(struct.pack("<Qddd", adam.step, adam.beta1, adam.beta2, adam.epsilon))
    for blob in (cfg.to_text(), json.dumps(extra or {}, sort_keys=True)):
        raw = blob.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> Checkpoint:
    rd = _Reader(data)
    if rd.take(4, "magic") != MAGIC:
        raise FormatError("bad checkpoint magic (expected b'EMD1')", 0)
    (version,) = rd.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})", 4)
    size, base, r, skip = rd.unpack("<IIIB", "architecture")
    arch = ArchConfig(size, base, r, bool(skip))
    (count,) = rd.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (nlen,) = rd.unpack("<I", "name length")
        name = rd.take(nlen, "name").decode("utf-8")
        itemsize, rank = rd.unpack("<BI", f"header of {name}")
        if itemsize not in _DTYPES:
            raise FormatError(f"tensor {name} has unsupported itemsize {itemsize}", rd.pos - 5)
        shape = rd.unpack(f"<{rank}I", f"shape of {name}")
        n = int(np.prod(shape, dtype=np.int64))
        dt = _DTYPES[itemsize]
        arr = np.frombuffer(rd.take(n * itemsize, f"data of {name}"), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="))
    step, b1, b2, eps = rd.unpack("<Qddd", "adam state")
    (clen,) = rd.unpack("<I", "config length")
    cfg = TrainConfig.from_text(rd.take(clen, "config").decode("utf-8"))
    (elen,) = rd.unpack("<I", "extra length")
    extra = json.loads(rd.take(elen, "extra").decode("utf-8"))
    if rd.pos != len(data):
        raise FormatError(f"{len(data) - rd.pos} trailing bytes after checkpoint", rd.pos)

    params, bn = {}, {}
    adam = AdamState(b1, b2, eps, int(step))
    for name, arr in tensors.items():
        kind, key = name.split("/", 1)
        if kind == "param":
            params[key] = Tensor(arr, requires_grad=True, name=key)
        elif kind == "bn.mean":
            bn[key] = BatchNormState(arr, tensors["bn.var/" + key])
        elif kind == "adam.m":
            adam.m[key] = arr
        elif kind == "adam.v":
            adam.v[key] = arr
        elif kind != "bn.var":
            raise FormatError(f"unknown tensor section {name!r}")
    return Checkpoint(EMDModel(arch, params, bn), adam, cfg, extra)


def save_checkpoint(model, adam_state, cfg, path, extra=None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(model, adam_state, cfg, extra))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        return loads(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None
