"""Binary weight container.

Layout (all little-endian): magic ``b"BWGT"``, u32 manifest entry count,
then per entry a u16 name length, the UTF-8 name bytes, a u8 rank and
rank u32 dims.  After the manifest comes the payload: the concatenated
float32 data of every entry in manifest order.

Loading validates the manifest against the model's parameter schema
(names and shapes, in order) and the payload length before touching any
model state, so a failed load never leaves a half-mutated model.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    WeightFormatError,
    WeightNameError,
    WeightPayloadError,
    WeightShapeError,
)
from .model import Model

WEIGHT_MAGIC = b"BWGT"


def pack_container(entries: list[tuple[str, np.ndarray]]) -> bytes:
    """Serialize (name, float32 array) pairs into container bytes."""
    out = bytearray()
    out += WEIGHT_MAGIC
    out += struct.pack("<I", len(entries))
    payload = bytearray()
    for name, arr in entries:
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += arr.astype("<f4", copy=False).tobytes()
    return bytes(out) + bytes(payload)


def unpack_container(raw: bytes) -> list[tuple[str, np.ndarray]]:
    """Parse container bytes back into (name, array) pairs."""
    if len(raw) < 8 or raw[:4] != WEIGHT_MAGIC:
        raise WeightFormatError("not a weight container (bad magic)")
    (count,) = struct.unpack_from("<I", raw, 4)
    offset = 8
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
        except (struct.error, UnicodeDecodeError) as exc:
            raise WeightFormatError(f"truncated or corrupt manifest: {exc}") from exc
        manifest.append((name, tuple(dims)))
    seen = set()
    for name, _ in manifest:
        if name in seen:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
    total = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in manifest)
    payload = raw[offset:]
    if len(payload) != 4 * total:
        raise WeightPayloadError(
            f"payload is {len(payload)} bytes, manifest requires {4 * total}"
        )
    entries = []
    pos = 0
    for name, shape in manifest:
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=4 * pos)
        entries.append((name, arr.reshape(shape).astype(np.float32, copy=True)))
        pos += n
    return entries


def save_weights(model: Model, path) -> None:
    with open(path, "wb") as fp:
        fp.write(pack_container(list(model.parameters())))


def load_weights(model: Model, path) -> Model:
    """Populate ``model`` from a container file; validates before mutating."""
    with open(path, "rb") as fp:
        entries = unpack_container(fp.read())
    schema = model.parameter_schema()
    if len(entries) != len(schema):
        raise WeightNameError(
            f"container has {len(entries)} tensors, model expects {len(schema)}"
        )
    for (got_name, arr), (want_name, want_shape) in zip(entries, schema):
        if got_name != want_name:
            raise WeightNameError(
                f"tensor name mismatch: container has {got_name!r}, "
                f"model expects {want_name!r}"
            )
        if tuple(arr.shape) != want_shape:
            raise WeightShapeError(
                f"tensor {got_name!r} has shape {tuple(arr.shape)}, "
                f"model expects {want_shape}"
            )
    model.set_parameters(dict(entries))
    return model
