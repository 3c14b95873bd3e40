"""Hashing, domain separation and the deterministic random generator.

Every derived value in the package goes through :func:`tagged_hash` with a
one-byte domain tag, so that no two constructions can collide on the same
input. SHA-256 is the hash for the whole package.
"""

from __future__ import annotations

import hashlib
import struct

import gmpy2

HASH_LEN = 32

# Domain tags (one byte, prepended to the hash input).
TAG_HASH_TO_FIELD = 0x01
TAG_PAYLOAD_KEY = 0x02
TAG_PUF = 0x03
TAG_UPLINK_KEY = 0x04
TAG_AEAD_ENC = 0x05
TAG_AEAD_MAC = 0x06
TAG_DRBG = 0x07
TAG_A3 = 0x08
TAG_A8 = 0x09
TAG_A5 = 0x0A
TAG_LOCK_PAD = 0x0B
TAG_PUF_HARDENED = 0x0C
TAG_PUF_FEEDBACK = 0x0D
TAG_AUDIT_LOG = 0x0E


def H(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def tagged_hash(tag: int, *parts: bytes) -> bytes:
    h = hashlib.sha256(bytes([tag]))
    for p in parts:
        h.update(p)
    return h.digest()


def be32(n: int) -> bytes:
    return struct.pack(">I", n)


def be64(n: int) -> bytes:
    return struct.pack(">Q", n)


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def is_probable_prime(n: int, rounds: int = 64) -> bool:
    """Miller-Rabin with ``rounds`` bases (GMP implementation)."""
    if n < 2:
        return False
    return bool(gmpy2.is_prime(n, rounds))


class Drbg:
    """Counter-mode hash generator: block ``i`` is ``H(0x07 || seed || be64(i))``.

    Output is consumed as a byte stream, so two generators with the same seed
    produce the same bytes regardless of how reads are chunked.
    """

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("drbg seed must be 32 bytes")
        self._seed = bytes(seed)
        self._counter = 0
        self._buf = b""

    def read(self, n: int) -> bytes:
        while len(self._buf) < n:
            self._buf += tagged_hash(TAG_DRBG, self._seed, be64(self._counter))
            self._counter += 1
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randbits(self, bits: int) -> int:
        if bits <= 0:
            return 0
        nbytes = (bits + 7) // 8
        v = int.from_bytes(self.read(nbytes), "big")
        return v & ((1 << bits) - 1)

    def randbelow(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by masked rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        bits = (bound - 1).bit_length()
        while True:
            v = self.randbits(bits)
            if v < bound:
                return v

    def random(self) -> float:
        """Uniform float in [0, 1) with 32 bits of resolution."""
        return int.from_bytes(self.read(4), "big") / 2**32

    def fork(self) -> "Drbg":
        return Drbg(self.read(32))


def seed_from(value) -> bytes:
    """Normalise an int, hex string or bytes into a 32-byte generator seed."""
    if isinstance(value, (bytes, bytearray)):
        if len(value) != 32:
            raise ValueError("byte seeds must be 32 bytes")
        return bytes(value)
    if isinstance(value, str):
        s = value.strip().lower()
        if s.startswith("0x"):
            s = s[2:]
            return int(s, 16).to_bytes(32, "big")
        if len(s) == 64:
            return bytes.fromhex(s)
        return int(s).to_bytes(32, "big")
    if isinstance(value, int):
        if value < 0:
            raise ValueError("seed must be non-negative")
        return value.to_bytes(32, "big")
    raise TypeError(f"cannot build a seed from {type(value).__name__}")
