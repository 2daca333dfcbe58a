"""Binary embedding-cache serialization (the SVEC interchange format).

Layout: magic "SVEC", u32 version=1, u32 d_clip, u32 d_rb; then per record
u32 id-length, utf-8 id, u32 N, followed by little-endian float32 arrays
v, c_clip, N x r_clip, c_rb, N x r_rb. Embeddings are written raw
(unnormalized); consumers decide whether to normalize on load.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"SVEC"
VERSION = 1


@dataclass
class CacheRecord:
    v: np.ndarray        # (d_clip,)
    c_clip: np.ndarray   # (d_clip,)
    r_clip: np.ndarray   # (N, d_clip)
    c_rb: np.ndarray     # (d_rb,)
    r_rb: np.ndarray     # (N, d_rb)

    def __post_init__(self):
        if self.r_clip.shape[0] != self.r_rb.shape[0]:
            raise ValidationError("reference counts differ across encoders")
        if self.r_clip.shape[0] == 0:
            raise ValidationError("at least one reference is required")


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_svec(path: str | os.PathLike, records: dict[str, CacheRecord],
               d_clip: int, d_rb: int) -> None:
    if not records:
        raise ValidationError("cannot write an empty cache")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<III", VERSION, d_clip, d_rb)
    for sid, rec in records.items():
        if rec.v.shape != (d_clip,) or rec.c_clip.shape != (d_clip,) \
                or rec.r_clip.shape[1] != d_clip \
                or rec.c_rb.shape != (d_rb,) or rec.r_rb.shape[1] != d_rb:
            raise FormatError(f"record {sid!r} does not match header dims "
                              f"({d_clip}, {d_rb})")
        id_bytes = sid.encode("utf-8")
        out += struct.pack("<I", len(id_bytes))
        out += id_bytes
        out += struct.pack("<I", rec.r_clip.shape[0])
        for arr in (rec.v, rec.c_clip, rec.r_clip, rec.c_rb, rec.r_rb):
            out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    atomic_write(path, bytes(out))


def read_svec(path: str | os.PathLike) -> tuple[int, int, dict[str, CacheRecord]]:
    """Minimal reader for sanity checks; returns (d_clip, d_rb, records)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, d_clip, d_rb = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 16
    records: dict[str, CacheRecord] = {}

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise FormatError(f"{path}: truncated at byte {pos}")
        view = memoryview(buf)[pos:pos + nbytes]
        pos += nbytes
        return view

    def take_f32(count):
        return np.frombuffer(take(4 * count), dtype="<f4").copy()

    while pos < len(buf):
        (id_len,) = struct.unpack("<I", take(4))
        sid = bytes(take(id_len)).decode("utf-8")
        (n,) = struct.unpack("<I", take(4))
        records[sid] = CacheRecord(
            v=take_f32(d_clip),
            c_clip=take_f32(d_clip),
            r_clip=take_f32(n * d_clip).reshape(n, d_clip),
            c_rb=take_f32(d_rb),
            r_rb=take_f32(n * d_rb).reshape(n, d_rb),
        )
    return d_clip, d_rb, records
