"""Binary checkpoint: model dims, parameters, optimizer, memory table, RNG and config.

Layout (little-endian throughout)::

    b"PTGL0001"
    u32 section count
    per section: u32 name length, name (utf-8), u64 payload length, payload

Sections, in this order: ``dims`` (6 x u32: d_m d_e d_h d_s d_f d_t),
``params`` (f64 vector in tgn.PARAM_ORDER), ``adam`` (u64 t, f64 m, f64 v),
``memory`` (u64 n_nodes, u32 d_m, f64 mem row-major by node id, f64
last_update), ``rng`` (json: bit generator state and training position),
``config`` (json), and optionally ``ewc`` (f64 lambda, f64 anchor, f64
fisher). JSON payloads use sorted keys and compact separators so equal
states encode to equal bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continual import EwcState
from .tgn import AdamState, MemoryState, ModelDims, ModelParams

MAGIC = b"PTGL0001"
REQUIRED = ("dims", "params", "adam", "memory", "rng", "config")


class CheckpointError(ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionUnsupported(CheckpointError):
    pass


class Truncated(CheckpointError):
    def __init__(self, section: str):
        super().__init__(f"truncated checkpoint in section {section!r}")
        self.section = section


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState
    memory: MemoryState
    rng_state: dict
    config: dict = field(default_factory=dict)
    position: tuple[int, int] = (0, 0)
    ewc: EwcState | None = None

    @property
    def dims(self) -> ModelDims:
        return self.params.dims

    def rng(self) -> np.random.Generator:
        bitgen = getattr(np.random, self.rng_state["bit_generator"])()
        bitgen.state = self.rng_state
        return np.random.Generator(bitgen)


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def encode(ck: Checkpoint) -> bytes:
    d = ck.dims
    sections = [
        ("dims", struct.pack("<6I", d.d_m, d.d_e, d.d_h, d.d_s, d.d_f, d.d_t)),
        ("params", _f64(ck.params.flat)),
        ("adam", struct.pack("<Q", ck.adam.t) + _f64(ck.adam.m) + _f64(ck.adam.v)),
        ("memory", struct.pack("<QI", ck.memory.n_nodes, ck.memory.mem.shape[1])
         + _f64(ck.memory.mem) + _f64(ck.memory.last)),
        ("rng", _json({"state": ck.rng_state, "position": list(ck.position)})),
        ("config", _json(ck.config)),
    ]
    if ck.ewc is not None:
        sections.append(("ewc", struct.pack("<d", ck.ewc.lam) + _f64(ck.ewc.anchor) + _f64(ck.ewc.fisher)))
    out = [MAGIC, struct.pack("<I", len(sections))]
    for name, payload in sections:
        raw = name.encode("utf-8")
        out += [struct.pack("<I", len(raw)), raw, struct.pack("<Q", len(payload)), payload]
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, section: str) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(section)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def _array(buf: bytes, offset: int, count: int, section: str) -> np.ndarray:
    if offset + 8 * count > len(buf):
        raise Truncated(section)
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)


def decode(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC):
        raise Truncated("header")
    head = data[:len(MAGIC)]
    if head != MAGIC:
        if head[:4] == MAGIC[:4]:
            raise VersionUnsupported(head[4:].decode("ascii", "replace"))
        raise BadMagic(head)
    rd = _Reader(data)
    rd.pos = len(MAGIC)
    (count,) = struct.unpack("<I", rd.take(4, "header"))
    sections: dict[str, bytes] = {}
    for i in range(count):
        (n,) = struct.unpack("<I", rd.take(4, f"#{i}"))
        name = rd.take(n, f"#{i}").decode("utf-8")
        (size,) = struct.unpack("<Q", rd.take(8, name))
        sections[name] = rd.take(size, name)
    if rd.pos != len(data):
        raise CheckpointError("trailing bytes after last section")
    for name in REQUIRED:
        if name not in sections:
            raise Truncated(name)

    if len(sections["dims"]) != 24:
        raise Truncated("dims")
    dims = ModelDims(*struct.unpack("<6I", sections["dims"]))
    p = sections["params"]
    if len(p) != 8 * dims.size:
        raise Truncated("params")
    params = ModelParams(dims, _array(p, 0, dims.size, "params"))

    a = sections["adam"]
    if len(a) != 8 + 16 * dims.size:
        raise Truncated("adam")
    (t,) = struct.unpack_from("<Q", a)
    adam = AdamState(_array(a, 8, dims.size, "adam"), _array(a, 8 + 8 * dims.size, dims.size, "adam"), t)

    m = sections["memory"]
    if len(m) < 12:
        raise Truncated("memory")
    n_nodes, d_m = struct.unpack_from("<QI", m)
    if len(m) != 12 + 8 * n_nodes * (d_m + 1):
        raise Truncated("memory")
    memory = MemoryState(0, d_m)
    memory.mem = _array(m, 12, n_nodes * d_m, "memory").reshape(n_nodes, d_m)
    memory.last = _array(m, 12 + 8 * n_nodes * d_m, n_nodes, "memory")

    rng = json.loads(sections["rng"])
    config = json.loads(sections["config"])
    ewc = None
    if "ewc" in sections:
        e = sections["ewc"]
        if len(e) != 8 + 16 * dims.size:
            raise Truncated("ewc")
        (lam,) = struct.unpack_from("<d", e)
        ewc = EwcState(_array(e, 8, dims.size, "ewc"), _array(e, 8 + 8 * dims.size, dims.size, "ewc"), lam)
    return Checkpoint(params, adam, memory, rng["state"], config, tuple(rng["position"]), ewc)


def save_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(encode(ck))


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
