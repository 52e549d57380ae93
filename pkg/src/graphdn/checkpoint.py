"""Binary checkpoint container.

Layout, all integers little-endian:
    magic   4 bytes  b"GCNN"
    version u16      currently 1
    count   u32      number of tensor entries
    entry*  u16 name length, utf-8 name,
            u8 dtype code (1 = float32, 2 = float64, 3 = int64),
            u8 rank, u32 extent per axis,
            raw little-endian payload
    config  u32 byte length, utf-8 canonical config text

Entries are written in sorted name order and payloads verbatim, so identical
tensors give identical files and a save/load round trip is bit-exact.
Training state rides along as extra entries under the "opt." and "train."
prefixes; plain model loading ignores those.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import DataError
from .model import (GraphCnnModel, build_model, named_parameters, named_state,
                    network_config_from_text, network_config_to_text)

MAGIC = b"GCNN"
VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES_BY_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}


def save_checkpoint(path: str, tensors: dict[str, np.ndarray], config_text: str) -> None:
    chunks = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if not arr.flags.c_contiguous:
            # ascontiguousarray would also promote rank-0 to rank-1
            arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES_BY_KIND:
            raise DataError(f"checkpoint tensor {name} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", _CODES_BY_KIND[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        chunks.append(le.tobytes())
    cb = config_text.encode("utf-8")
    chunks.append(struct.pack("<I", len(cb)))
    chunks.append(cb)
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise DataError(f"{self.path}: truncated checkpoint")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], str]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise DataError(f"{path}: no such checkpoint") from None
    rd = _Reader(data, path)
    if rd.take(4) != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (version,) = rd.unpack("<H")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (count,) = rd.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        code, rank = rd.unpack("<BB")
        if code not in _DTYPE_CODES:
            raise DataError(f"{path}: tensor {name} has unknown dtype code {code}")
        shape = rd.unpack(f"<{rank}I")
        dt = _DTYPE_CODES[code]
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = rd.take(n_items * dt.itemsize)
        arr = np.frombuffer(payload, dtype=dt).reshape(shape).copy()
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=False)
    (clen,) = rd.unpack("<I")
    config_text = rd.take(clen).decode("utf-8")
    if rd.off != len(data):
        raise DataError(f"{path}: {len(data) - rd.off} trailing bytes after config block")
    return tensors, config_text


def model_tensors(model: GraphCnnModel) -> dict[str, np.ndarray]:
    out = {name: p.data for name, p in named_parameters(model).items()}
    out.update(named_state(model))
    return out


def save_model(path: str, model: GraphCnnModel,
               extra: dict[str, np.ndarray] | None = None) -> None:
    tensors = model_tensors(model)
    if extra:
        overlap = set(tensors) & set(extra)
        if overlap:
            raise DataError(f"extra checkpoint tensors collide with model names: {sorted(overlap)}")
        tensors.update(extra)
    save_checkpoint(path, tensors, network_config_to_text(model.config))


_AUX_PREFIXES = ("opt.", "train.")


def load_model(path: str) -> GraphCnnModel:
    """Model with the architecture and weights stored in the file. Training
    state entries are ignored here; missing or misshapen model tensors are
    errors."""
    tensors, config_text = load_checkpoint(path)
    cfg = network_config_from_text(config_text)
    model = build_model(cfg, init=False)
    expected = model_tensors(model)
    for name, target in expected.items():
        if name not in tensors:
            raise DataError(f"{path}: checkpoint is missing tensor {name}")
        src = tensors[name]
        if src.shape != target.shape:
            raise DataError(f"{path}: tensor {name} has shape {src.shape}, expected {target.shape}")
        if src.dtype != target.dtype:
            raise DataError(f"{path}: tensor {name} has dtype {src.dtype}, expected {target.dtype}")
        target[...] = src
    for name in tensors:
        if name not in expected and not name.startswith(_AUX_PREFIXES):
            raise DataError(f"{path}: unexpected tensor {name}")
    return model


def aux_tensors(path: str) -> dict[str, np.ndarray]:
    """The opt./train. entries of a checkpoint (empty for plain model files)."""
    tensors, _ = load_checkpoint(path)
    return {k: v for k, v in tensors.items() if k.startswith(_AUX_PREFIXES)}


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_digest(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()
