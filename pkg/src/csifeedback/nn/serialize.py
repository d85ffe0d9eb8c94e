"""Binary parameter files.

Layout: magic "CSIW", u8 version, u32 layer count, then per layer:
u8 kind code, u16 name length, UTF-8 name, u32 tensor count, and per
tensor u8 rank, u32 extents, then 32-bit little-endian floats. Tensor
order within a layer is fixed per kind (PARAM_ORDER), so shapes are the
only compatibility check needed on load.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError
from .graph import PARAM_ORDER, ModelGraph

MAGIC = b"CSIW"
VERSION = 1

KIND_CODES = {
    "conv2d": 0,
    "dense": 1,
    "batchnorm": 2,
    "activation": 3,
    "reshape": 4,
    "concat": 5,
    "slice": 6,
    "residual_add": 7,
}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


def save_params(graph: ModelGraph, path):
    """Write every layer's parameter tensors as little-endian float32."""
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(graph.layers))]
    for spec, params in zip(graph.layers, graph.params):
        name = spec.name.encode("utf-8")
        keys = PARAM_ORDER.get(spec.kind, ())
        chunks.append(
            struct.pack("<BH", KIND_CODES[spec.kind], len(name)) + name
        )
        chunks.append(struct.pack("<I", len(keys)))
        for key in keys:
            t = np.ascontiguousarray(params[key], dtype="<f4")
            chunks.append(struct.pack("<B", t.ndim))
            chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
            chunks.append(t.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_params(graph: ModelGraph, path):
    """Load a parameter file into a structurally matching graph."""
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a parameter file")
    version, n_layers = r.unpack("<BI")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n_layers != len(graph.layers):
        raise FormatError(
            f"{path}: file has {n_layers} layers, graph has {len(graph.layers)}"
        )
    for i, (spec, params) in enumerate(zip(graph.layers, graph.params)):
        code, name_len = r.unpack("<BH")
        name = r.take(name_len).decode("utf-8")
        if CODE_KINDS.get(code) != spec.kind:
            raise FormatError(
                f"{path}: layer {i} is {CODE_KINDS.get(code)!r} in file, "
                f"{spec.kind!r} in graph"
            )
        keys = PARAM_ORDER.get(spec.kind, ())
        (n_tensors,) = r.unpack("<I")
        if n_tensors != len(keys):
            raise FormatError(
                f"{path}: layer {name!r} has {n_tensors} tensors, expected {len(keys)}"
            )
        for key in keys:
            (rank,) = r.unpack("<B")
            shape = r.unpack(f"<{rank}I")
            if tuple(shape) != params[key].shape:
                raise FormatError(
                    f"{path}: layer {name!r} tensor {key!r} has shape {shape}, "
                    f"graph expects {params[key].shape}"
                )
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
            params[key][...] = data.astype(graph.dtype, copy=False)
    if r.remaining():
        raise FormatError(f"{path}: {r.remaining()} trailing bytes")
    graph.meta["trained"] = True
    return graph


def file_size_for(graph: ModelGraph) -> int:
    """Exact byte size save_params will produce for this graph."""
    size = 4 + 1 + 4
    for spec, params in zip(graph.layers, graph.params):
        size += 1 + 2 + len(spec.name.encode("utf-8")) + 4
        for key in PARAM_ORDER.get(spec.kind, ()):
            t = params[key]
            size += 1 + 4 * t.ndim + 4 * t.size
    return size


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated file")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def remaining(self):
        return len(self.raw) - self.pos
