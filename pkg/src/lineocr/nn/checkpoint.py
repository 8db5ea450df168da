"""SLCKPT01 checkpoint files.

Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON header,
then raw little-endian float64 arrays in the order the header lists them.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datagen import max_words_for_stage
from .model import CRNN, ModelSpec
from .optim import Adam

MAGIC = b"SLCKPT01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class NotACheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: CRNN
    optimizer: Adam | None = None
    stage: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def max_words(self):
        return max_words_for_stage(self.stage)

    @property
    def frozen(self):
        return self.model.frozen


def save_checkpoint(ckpt: Checkpoint, path):
    model = ckpt.model
    arrays = []
    entries = []

    def add(group, name, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"group": group, "name": name, "shape": list(arr.shape)})
        arrays.append(arr)

    for name, t in model.named_params():
        add("param", name, t.data)
    for name, buf in model.buffers():
        add("buffer", name, buf)
    opt_state = None
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        opt_state = opt.state()
        for name in sorted(opt.m):
            add("adam_m", name, opt.m[name])
            add("adam_v", name, opt.v[name])
    header = {
        "version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "arrays": entries,
        "stage": ckpt.stage,
        "seed": ckpt.seed,
        "frozen": model.frozen,
        "optimizer": opt_state,
        "meta": ckpt.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for a in arrays:
            fh.write(a.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if len(buf) < 8 or not buf[:6] == MAGIC[:6]:
        raise NotACheckpoint(f"{path}: not a checkpoint")
    if buf[:8] != MAGIC:
        raise VersionMismatch(f"{path}: unsupported checkpoint version {buf[6:8]!r}")
    if len(buf) < 16:
        raise TruncatedCheckpoint(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    if len(buf) < 16 + hlen:
        raise TruncatedCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise NotACheckpoint(f"{path}: unreadable header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: header version {header.get('version')} != {FORMAT_VERSION}")
    try:
        spec = ModelSpec.from_dict(header["spec"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeMismatch(f"{path}: architecture descriptor rejected ({exc})") from None
    model = CRNN(spec, seed=header["seed"])
    params = dict(model.named_params())
    offset = 16 + hlen
    loaded = {"param": {}, "buffer": {}, "adam_m": {}, "adam_v": {}}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64)) * 8
        if offset + n > len(buf):
            raise TruncatedCheckpoint(f"{path}: data ends inside array {e['name']}")
        arr = np.frombuffer(buf, dtype="<f8", count=n // 8, offset=offset).reshape(e["shape"])
        offset += n
        loaded[e["group"]][e["name"]] = arr.astype(np.float64)
    if offset != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - offset} trailing bytes")
    if set(loaded["param"]) != set(params):
        raise ShapeMismatch(f"{path}: parameter names do not match the architecture")
    for name, t in params.items():
        arr = loaded["param"][name]
        if arr.shape != t.data.shape:
            raise ShapeMismatch(f"{path}: {name} has shape {arr.shape}, architecture wants {t.data.shape}")
        t.data[...] = arr
    expected_buffers = dict(model.buffers())
    for name, arr in loaded["buffer"].items():
        if name not in expected_buffers or expected_buffers[name].shape != arr.shape:
            raise ShapeMismatch(f"{path}: buffer {name} does not fit the architecture")
    model.load_buffers(loaded["buffer"])
    model.freeze(header["frozen"])
    opt = None
    if header["optimizer"] is not None:
        st = header["optimizer"]
        opt = Adam(st["lr"], st["beta1"], st["beta2"], st["eps"])
        opt.t = st["t"]
        opt.m = dict(loaded["adam_m"])
        opt.v = dict(loaded["adam_v"])
    return Checkpoint(model, opt, header["stage"], header["seed"], header.get("meta", {}))
