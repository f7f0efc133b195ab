"""Hash primitives, little-endian field encoders and seed derivation."""

from __future__ import annotations

import hashlib
import struct

HASH_SIZE = 32
ZERO_HASH = bytes(HASH_SIZE)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def sha256d(data: bytes) -> bytes:
    """Double SHA-256, used for txids, header hashes and Merkle nodes."""
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


def u8(x: int) -> bytes:
    return struct.pack("<B", x)


def u32(x: int) -> bytes:
    return struct.pack("<I", x)


def u64(x: int) -> bytes:
    return struct.pack("<Q", x)


def u256(x: int) -> bytes:
    return x.to_bytes(32, "little")


def var_bytes(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


class Reader:
    """Cursor over a byte string; raises ValueError on truncation."""

    def __init__(self, data: bytes, offset: int = 0) -> None:
        self.data = data
        self.pos = offset

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise ValueError(f"truncated input at offset {self.pos} (need {n} bytes)")
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u256(self) -> int:
        return int.from_bytes(self.take(32), "little")

    def var_bytes(self) -> bytes:
        return self.take(self.u32())

    def at_end(self) -> bool:
        return self.pos == len(self.data)


def derive_seed(seed: int, label: str, index: int = 0) -> int:
    """64-bit child seed for ``(seed, component label, index)``."""
    digest = hashlib.sha256(f"{seed}:{label}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
