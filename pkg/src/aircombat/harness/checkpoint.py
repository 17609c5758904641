"""Binary checkpoint container.

Layout, all integers little-endian::

    magic      8 bytes   b"ACMBCKPT"
    version    u32
    digest     32 bytes  SHA-256 of the run configuration (see config_digest)
    timestep   u64
    count      u32       number of arrays
    count times:
        name_len u16, name (utf-8)
        ndim     u8, shape u64 * ndim
        data     float64 little-endian, C order
    checksum   32 bytes  SHA-256 of every preceding byte

Arrays are written in sorted name order, so saving a loaded checkpoint
reproduces the original bytes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import IntegrityError

MAGIC = b"ACMBCKPT"
FORMAT_VERSION = 1
_DIGEST_BYTES = 32


@dataclass
class Checkpoint:
    digest: str
    timestep: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    digest = bytes.fromhex(ckpt.digest)
    if len(digest) != _DIGEST_BYTES:
        raise ValueError("config digest must be 32 bytes of hex")
    parts = [MAGIC, struct.pack("<I", ckpt.version), digest, struct.pack("<QI", ckpt.timestep, len(ckpt.arrays))]
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                                 f"file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + _DIGEST_BYTES:
        raise IntegrityError(f"file too short for a checkpoint ({len(data)} bytes)")
    if data[:len(MAGIC)] != MAGIC:
        raise IntegrityError("bad magic at offset 0: not a checkpoint file")
    body, checksum = data[:-_DIGEST_BYTES], data[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != checksum:
        raise IntegrityError(f"checksum mismatch over bytes [0, {len(body)}); trailer at offset {len(body)}")
    r = _Reader(body)
    r.take(len(MAGIC), "magic")
    (version,) = r.unpack("<I", "version")
    digest = r.take(_DIGEST_BYTES, "config digest").hex()
    timestep, count = r.unpack("<QI", "header")
    arrays = {}
    for _ in range(count):
        start = r.pos
        (name_len,) = r.unpack("<H", "name length")
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise IntegrityError(f"array name at offset {start} is not utf-8") from None
        (ndim,) = r.unpack("<B", f"ndim of {name!r}")
        shape = r.unpack(f"<{ndim}Q", f"shape of {name!r}")
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = r.take(8 * size, f"data of {name!r} (offset {r.pos})")
        if name in arrays:
            raise IntegrityError(f"duplicate array {name!r} at offset {start}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(body):
        raise IntegrityError(f"{len(body) - r.pos} trailing bytes at offset {r.pos}")
    return Checkpoint(digest, timestep, arrays, version)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Write atomically: a partial file never replaces a good one."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path, expected_digest: str | None = None, force: bool = False) -> Checkpoint:
    """Read and verify a checkpoint.

    Raises :class:`IntegrityError` on corruption, an unknown format version,
    or (unless ``force``) a config digest different from ``expected_digest``.
    An unreadable file raises the underlying :class:`OSError`.
    """
    data = Path(path).read_bytes()
    ckpt = decode_checkpoint(data)
    if ckpt.version != FORMAT_VERSION and not force:
        raise IntegrityError(f"checkpoint format version {ckpt.version}, this build reads {FORMAT_VERSION}")
    if expected_digest is not None and ckpt.digest != expected_digest and not force:
        raise IntegrityError(f"config digest mismatch: checkpoint {ckpt.digest[:12]}..., "
                             f"current config {expected_digest[:12]}... (pass force to override)")
    return ckpt


def text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def array_to_text(arr: np.ndarray) -> str:
    return np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8")
