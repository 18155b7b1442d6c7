"""Binary time-tag file format.

Little-endian layout, fixed for bit-exact round trips:

    header (24 bytes): magic "ITG1" | version u32 = 1 | resolution_ps u32 = 1
                       | channel_count u8 | 3 reserved bytes | record_count u64
    record (9 bytes):  channel u8 | timestamp u64 (picoseconds)

Records are sorted by timestamp.  Writes go through a temporary file and
an atomic rename.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .optics import TAG_DTYPE

MAGIC = b"ITG1"
VERSION = 1
RESOLUTION_PS = 1
_HEADER = struct.Struct("<4sII B3x Q")
HEADER_SIZE = _HEADER.size  # 24
RECORD_SIZE = TAG_DTYPE.itemsize  # 9


class TagFileError(ValueError):
    """Structured parse failure; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class TagFileHeader:
    version: int
    resolution_ps: int
    channel_count: int
    record_count: int


def write_tags(path: str | os.PathLike, tags: np.ndarray,
               channel_count: int = 2) -> TagFileHeader:
    """Write a sorted tag array atomically; returns the header written."""
    tags = np.ascontiguousarray(tags, dtype=TAG_DTYPE)
    if tags.size and np.any(np.diff(tags["time"].astype(np.int64)) < 0):
        raise ValueError("tags must be sorted by timestamp before writing")
    header = TagFileHeader(VERSION, RESOLUTION_PS, channel_count, int(tags.size))
    payload = _HEADER.pack(MAGIC, header.version, header.resolution_ps,
                           header.channel_count, header.record_count)
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.write(tags.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return header


def read_tags(path: str | os.PathLike) -> tuple[np.ndarray, TagFileHeader]:
    """Read and validate a tag file; raises TagFileError naming the bad offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise TagFileError(f"file truncated inside header ({len(raw)} bytes)", len(raw))
    magic, version, resolution, channels, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TagFileError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise TagFileError(f"unsupported version {version}", 4)
    if resolution != RESOLUTION_PS:
        raise TagFileError(f"unsupported resolution {resolution} ps", 8)
    body = len(raw) - HEADER_SIZE
    if body != count * RECORD_SIZE:
        expected = HEADER_SIZE + count * RECORD_SIZE
        raise TagFileError(
            f"record count {count} does not match body size {body}",
            min(expected, len(raw)))
    tags = np.frombuffer(raw, dtype=TAG_DTYPE, count=count, offset=HEADER_SIZE)
    t = tags["time"].astype(np.int64)
    if t.size and np.any(np.diff(t) < 0):
        bad = int(np.nonzero(np.diff(t) < 0)[0][0]) + 1
        raise TagFileError(f"records not sorted at index {bad}",
                           HEADER_SIZE + bad * RECORD_SIZE)
    return tags.copy(), TagFileHeader(version, resolution, channels, count)
