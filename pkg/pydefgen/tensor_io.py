"""Binary serialization of named float64 tensors.

Layout, all integers little-endian::

    magic      8 bytes   b"PYDGCKPT"
    version    u32
    header_len u64
    header     UTF-8 JSON, keys sorted: {"meta": {...}, "tensors": [...]}
    data       concatenated row-major <f8 buffers, in header order
    checksum   32 bytes  sha256 of every preceding byte

Each ``tensors`` item is ``{"name", "shape", "offset", "nbytes"}`` with the
offset relative to the start of ``data``. Tensors are written sorted by name, so
equal inputs always produce equal bytes.
"""
import hashlib
import json
from pathlib import Path
import struct
from typing import Mapping, Union

import numpy as np

from .exceptions import PydefgenCorruptCheckpoint
from .types import FloatArray, JsonObject

MAGIC = b"PYDGCKPT"
FORMAT_VERSION = 1

_PREAMBLE = struct.Struct("<8sIQ")
_DIGEST_SIZE = hashlib.sha256().digest_size


def dumps_tensors(tensors: Mapping[str, FloatArray], meta: JsonObject) -> bytes:
    """Serialize named tensors and a JSON metadata document.

    Args:
        tensors (Mapping[str, FloatArray]): Arrays by name.
        meta (JsonObject): JSON-serializable metadata.

    Returns:
        bytes: Encoded blob.
    """
    index = []
    buffers = []
    offset = 0
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f8").tobytes()
        index.append(
            {
                "name": name,
                "shape": list(np.shape(tensors[name])),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        buffers.append(data)
        offset += len(data)
    header = json.dumps(
        {"meta": meta, "tensors": index}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    preamble = _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header))
    body = preamble + header + b"".join(buffers)
    return body + hashlib.sha256(body).digest()


def loads_tensors(blob: bytes) -> tuple[dict[str, FloatArray], JsonObject]:
    """Decode a blob written by :func:`dumps_tensors`.

    Args:
        blob (bytes): Encoded blob.

    Raises:
        PydefgenCorruptCheckpoint: Bad magic, unknown version, checksum mismatch
            or an inconsistent header.

    Returns:
        tuple[dict[str, FloatArray], JsonObject]: Tensors by name and metadata.
    """
    if len(blob) < _PREAMBLE.size + _DIGEST_SIZE:
        raise PydefgenCorruptCheckpoint("Checkpoint is truncated")
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise PydefgenCorruptCheckpoint("Checkpoint checksum mismatch")
    magic, version, header_len = _PREAMBLE.unpack_from(body)
    if magic != MAGIC:
        raise PydefgenCorruptCheckpoint("Not a pydefgen checkpoint")
    if version != FORMAT_VERSION:
        raise PydefgenCorruptCheckpoint(f"Unsupported checkpoint version {version}")

    start = _PREAMBLE.size
    try:
        header = json.loads(body[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exception:
        raise PydefgenCorruptCheckpoint("Unreadable checkpoint header") from exception
    data = body[start + header_len :]

    tensors: dict[str, FloatArray] = {}
    for item in header["tensors"]:
        offset, nbytes, shape = item["offset"], item["nbytes"], tuple(item["shape"])
        if offset + nbytes > len(data) or nbytes != 8 * int(np.prod(shape)):
            raise PydefgenCorruptCheckpoint(f"Tensor '{item['name']}' is out of bounds")
        array = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset)
        tensors[item["name"]] = array.reshape(shape).astype(np.float64)
    return tensors, header["meta"]


def write_tensors(
    path: Union[str, Path], tensors: Mapping[str, FloatArray], meta: JsonObject
) -> Path:
    """Write :func:`dumps_tensors` output to ``path``, creating parent directories."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(dumps_tensors(tensors, meta))
    return target


def read_tensors(path: Union[str, Path]) -> tuple[dict[str, FloatArray], JsonObject]:
    """Read a file written by :func:`write_tensors`."""
    return loads_tensors(Path(path).read_bytes())
