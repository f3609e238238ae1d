"""Writer and point-reader for the canonical archive format.

The format: 8-byte magic ``SSVEPAR1``, an 8-byte little-endian unsigned header
length, a UTF-8 JSON header with the recording metadata, then the tensor as
little-endian float32 in [block][target][channel][sample] row-major order with
no trailing bytes.  This is an independent implementation of the documented
wire format so the converter stays decoupled from the pipeline package.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"SSVEPAR1"


class ArchiveFormatError(Exception):
    pass


def write_archive_file(meta: dict, data: np.ndarray, path) -> None:
    """Serialize metadata dict + [block][target][channel][sample] tensor."""
    expect = (meta["n_blocks"], meta["n_targets"], meta["n_channels"], meta["n_samples"])
    if data.shape != expect:
        raise ValueError(f"tensor shape {data.shape} does not match metadata {expect}")
    if not np.all(np.isfinite(data)):
        raise ValueError("refusing to write non-finite tensor")
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    os.replace(tmp, path)


def read_header(path) -> tuple:
    """(metadata dict, byte offset of the tensor payload)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ArchiveFormatError(f"{path}: bad magic bytes {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = fh.read(header_len)
    return json.loads(header.decode("utf-8")), 16 + header_len


def read_value(path, meta: dict, payload_offset: int,
               block: int, target: int, channel: int, sample: int) -> np.float32:
    """Read a single tensor value without loading the whole file."""
    index = ((block * meta["n_targets"] + target) * meta["n_channels"]
             + channel) * meta["n_samples"] + sample
    with open(path, "rb") as fh:
        fh.seek(payload_offset + 4 * index)
        raw = fh.read(4)
    if len(raw) != 4:
        raise ArchiveFormatError(f"{path}: truncated payload at index {index}")
    return np.frombuffer(raw, dtype="<f4")[0]
