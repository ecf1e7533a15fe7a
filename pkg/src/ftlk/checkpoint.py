"""FTLK checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"FTLK"
    version u32      1
    count   u32      number of named tensors
    entry*  count times:
        name_len u16, name utf-8, rank u8, dims u32 * rank, data f64 LE
    trailer u32 length + canonical JSON {"role": ..., "net": {...}}

The writer is canonical — entries in the store's deterministic construction
order, JSON with sorted keys and no whitespace — so writing an unmodified
store reproduces the input file byte for byte.
"""

import dataclasses
import json
import struct

import numpy as np

from .errors import ConfigError
from .net import NetConfig, ParamStore

MAGIC = b"FTLK"
VERSION = 1
ROLES = ("teacher_real", "generator_student", "fake_score")


def save(path, store: ParamStore, role: str, net: NetConfig) -> None:
    if role not in ROLES:
        raise ConfigError(f"unknown checkpoint role {role!r}")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    names = store.names()
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(store.params[name], dtype="<f8")
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    trailer = json.dumps({"role": role, "net": dataclasses.asdict(net)},
                         sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob += struct.pack("<I", len(trailer))
    blob += trailer
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load(path):
    """Returns (ParamStore, role, NetConfig)."""
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise ConfigError(f"truncated checkpoint {path}")
        piece = blob[off:off + n]
        off += n
        return piece

    if take(4) != MAGIC:
        raise ConfigError(f"{path} is not an FTLK checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims)
        if name in params:
            raise ConfigError(f"duplicate tensor name {name!r} in {path}")
        params[name] = data.astype(np.float64)
    (tlen,) = struct.unpack("<I", take(4))
    meta = json.loads(take(tlen).decode("utf-8"))
    if off != len(blob):
        raise ConfigError(f"{path} has {len(blob) - off} trailing bytes")
    role = meta.get("role")
    if role not in ROLES:
        raise ConfigError(f"unknown checkpoint role {role!r}")
    net = NetConfig(**meta["net"])
    store = ParamStore(params)
    template = ParamStore.zeros(net)
    if store.names() != template.names():
        raise ConfigError("checkpoint tensors do not match the declared net config")
    for name, ref in template.params.items():
        if store.params[name].shape != ref.shape:
            raise ConfigError(
                f"tensor {name!r} has shape {store.params[name].shape}, want {ref.shape}")
    return store, role, net
