"""Binary tensor-snapshot file format (magic "FZNT").

Byte layout, all integers little-endian:

    magic      4 bytes   b"FZNT"
    version    u16       currently 1
    then one record per tensor, in write order, until EOF:
      name_len   u16
      name       utf-8, name_len bytes
      rank       u8
      dims       rank x u32
      elem_size  u8        4 = float32, 8 = float64
      payload    prod(dims) * elem_size bytes, little-endian, row-major
      crc32      u32       of every preceding byte of this record

Round-trips are byte-exact: loading preserves order, shape and dtype, and
re-saving reproduces the identical file.
"""

from __future__ import annotations

import io
import struct
import zlib

import numpy as np

MAGIC = b"FZNT"
VERSION = 1

_ELEM_DTYPE = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Malformed or truncated snapshot file."""


class ChecksumError(CheckpointError):
    """Record payload does not match its stored CRC32."""

    def __init__(self, record_index: int, name: str):
        self.record_index = record_index
        self.name = name
        super().__init__(f"checksum mismatch in record {record_index} ({name!r})")


def _record_bytes(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    if arr.dtype == np.float32:
        payload = np.ascontiguousarray(arr, dtype="<f4")
    elif arr.dtype == np.float64:
        payload = np.ascontiguousarray(arr, dtype="<f8")
    else:
        raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += b"".join(struct.pack("<I", d) for d in arr.shape)
    head += struct.pack("<B", payload.dtype.itemsize)
    body = head + payload.tobytes()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_tensors(path, named_arrays: dict) -> None:
    """Write named float arrays to ``path`` in iteration order."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    for name, arr in named_arrays.items():
        buf.write(_record_bytes(name, np.asarray(arr)))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated file while reading {what}")
    return data


def load_tensors(path) -> dict:
    """Read a snapshot back as an ordered name -> array dict."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError("bad magic: not a FZNT snapshot")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported snapshot version {version}")
        index = 0
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise CheckpointError(f"truncated record {index}")
            (name_len,) = struct.unpack("<H", head)
            record = head + _read_exact(fh, name_len, f"record {index} name")
            name = record[2:].decode("utf-8")
            rank_b = _read_exact(fh, 1, f"record {index} rank")
            record += rank_b
            rank = rank_b[0]
            dims_b = _read_exact(fh, 4 * rank, f"record {index} dims")
            record += dims_b
            dims = struct.unpack(f"<{rank}I", dims_b) if rank else ()
            elem_b = _read_exact(fh, 1, f"record {index} element size")
            record += elem_b
            elem_size = elem_b[0]
            if elem_size not in _ELEM_DTYPE:
                raise CheckpointError(f"record {index} ({name!r}): bad element size {elem_size}")
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(fh, count * elem_size, f"record {index} payload")
            record += payload
            (stored_crc,) = struct.unpack("<I", _read_exact(fh, 4, f"record {index} crc"))
            if zlib.crc32(record) & 0xFFFFFFFF != stored_crc:
                raise ChecksumError(index, name)
            arr = np.frombuffer(payload, dtype=_ELEM_DTYPE[elem_size]).reshape(dims)
            out[name] = arr.astype(arr.dtype.newbyteorder("="))
            index += 1
    return out
