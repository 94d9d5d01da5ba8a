"""Binary model checkpoints.

Layout (little-endian)::

    b"BSDH-MDL"                    magic, 8 bytes
    u32 version                    currently 1
    u32 header_len, header bytes   UTF-8 JSON: input_shape, layers, code_length, beta, iteration
    per parameter, in declaration order:
        u64 count, count * f64
"""

import json
import struct

import numpy as np

from ..errors import FormatError, UnsupportedVersionError
from .model import Model

MAGIC = b"BSDH-MDL"
VERSION = 1


def dumps_checkpoint(model):
    header = json.dumps(model.header(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for p in model.params:
        parts.append(struct.pack("<Q", p.size))
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_checkpoint(blob):
    blob = memoryview(blob)
    if len(blob) < 16 or bytes(blob[:8]) != MAGIC:
        raise FormatError("not a BSDH model checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    pos = 16
    if pos + hlen > len(blob):
        raise FormatError("checkpoint truncated inside header")
    try:
        header = json.loads(bytes(blob[pos:pos + hlen]).decode("utf-8"))
        model = Model(header["layers"], header["input_shape"], beta=header["beta"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    pos += hlen
    loaded = []
    for p in model.params:
        if pos + 8 > len(blob):
            raise FormatError("checkpoint truncated before parameter tensor")
        (count,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if count != p.size:
            raise FormatError(f"parameter has {count} values, architecture expects {p.size}")
        end = pos + 8 * count
        if end > len(blob):
            raise FormatError("checkpoint truncated inside parameter tensor")
        loaded.append(np.frombuffer(blob[pos:end], dtype="<f8").reshape(p.shape))
        pos = end
    if pos != len(blob):
        raise FormatError("trailing bytes after last parameter tensor")
    # everything validated; only now mutate the model
    for p, v in zip(model.params, loaded):
        p[...] = v
    model.iteration = int(header.get("iteration", 0))
    return model


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(model))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
