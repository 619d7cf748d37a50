"""Flat binary model files.

Layout (all integers little-endian)::

    b"KARMAMDL"                      magic
    uint32  version (1)
    uint32  n, then n bytes           UTF-8 JSON config block
    uint32  segment count
    per segment:
        uint16 n, then n bytes        segment name
        uint64                        element count
        count * float64               values
    32 bytes                          SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import ChecksumError, ParseError
from ..features import ChannelScaler
from ..vmd import VmdConfig
from .model import DualStreamModel, ModelConfig

MAGIC = b"KARMAMDL"
VERSION = 1


def _config_block(model: DualStreamModel) -> dict:
    block = {
        "model": model.config.to_dict(),
        "n_low": model.n_low,
        "n_high": model.n_high,
        "window_len": model.window_len,
        "channels": model.channels,
        "meta": model.meta,
    }
    if model.vmd is not None:
        v = model.vmd
        block["vmd"] = {"k_max": int(v.k_max), "alpha": float(v.alpha), "tau": float(v.tau),
                        "tol": float(v.tol), "max_iters": int(v.max_iters), "init_omega": v.init_omega}
    if model.scalers is not None:
        block["scalers"] = {k: s.to_dict() for k, s in model.scalers.items()}
    return block


def dumps(model: DualStreamModel) -> bytes:
    cfg = json.dumps(_config_block(model), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(model.layout))]
    for name, start, size in model.segments():
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<Q", size),
                  np.ascontiguousarray(model.params[start:start + size], dtype="<f8").tobytes()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads(data: bytes) -> DualStreamModel:
    if len(data) < len(MAGIC) + 32 or data[:len(MAGIC)] != MAGIC:
        raise ParseError("not a model file (bad magic)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("model checksum mismatch")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise ParseError("truncated model file")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ParseError(f"unsupported model version {version}")
    (n,) = struct.unpack("<I", take(4))
    block = json.loads(take(n).decode())
    (n_seg,) = struct.unpack("<I", take(4))
    segments = {}
    for _ in range(n_seg):
        (ln,) = struct.unpack("<H", take(2))
        name = take(ln).decode()
        (count,) = struct.unpack("<Q", take(8))
        segments[name] = np.frombuffer(take(8 * count), dtype="<f8")
    if pos != len(body):
        raise ParseError("trailing bytes after parameter segments")

    mc = block["model"]
    config = ModelConfig(conv_filters=tuple(mc["conv_filters"]), kernel_size=mc["kernel_size"],
                         pool_size=mc["pool_size"], lstm_hidden=mc["lstm_hidden"],
                         gru_hidden=mc["gru_hidden"], attention_dim=mc["attention_dim"],
                         dense_sizes=tuple(mc["dense_sizes"]), seed=mc["seed"])
    scalers = None
    if "scalers" in block:
        scalers = {k: ChannelScaler.from_dict(d) for k, d in block["scalers"].items()}
    vmd = VmdConfig(**block["vmd"]) if "vmd" in block else None
    shell = DualStreamModel(config, block["n_low"], block["n_high"], block["window_len"],
                            params=np.zeros(sum(s.size for s in segments.values())))
    flat = []
    for name, shape in shell.layout:
        if name not in segments or segments[name].size != int(np.prod(shape)):
            raise ParseError(f"segment {name} missing or of wrong length")
        flat.append(segments[name])
    return DualStreamModel(config, block["n_low"], block["n_high"], block["window_len"],
                           params=np.concatenate(flat), scalers=scalers, vmd=vmd,
                           channels=block["channels"], meta=block.get("meta", {}))


def save_model(model: DualStreamModel, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load_model(path) -> DualStreamModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
