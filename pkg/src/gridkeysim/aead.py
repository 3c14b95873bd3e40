"""Hash-based authenticated envelope with an EAX'-style layout.

The header travels in clear but is covered by the tag; the payload is
encrypted with a hash keystream. Encryption and MAC keys are derived from
the 16-byte input key under separate domain tags (encrypt-then-MAC).

Wire format, big-endian lengths::

    version(1) | nonce(16) | len(A)(4) | A | len(C)(4) | C | tag
"""

from __future__ import annotations

import hmac
import struct
from dataclasses import dataclass

from .errors import AuthFailure, MalformedEnvelope
from .primitives import TAG_AEAD_ENC, TAG_AEAD_MAC, H, be32, be64

WIRE_VERSION = 1
NONCE_BYTES = 16
TAG_BYTES = 16


def make_nonce(sender_id: int, frame_counter: int) -> bytes:
    return be64(sender_id) + be64(frame_counter)


def split_nonce(nonce: bytes):
    return struct.unpack(">QQ", nonce)


@dataclass(frozen=True)
class Envelope:
    nonce: bytes
    header: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return b"".join([
            bytes([WIRE_VERSION]),
            self.nonce,
            be32(len(self.header)),
            self.header,
            be32(len(self.ciphertext)),
            self.ciphertext,
            self.tag,
        ])

    @classmethod
    def from_bytes(cls, data: bytes, tag_len: int = TAG_BYTES) -> "Envelope":
        if len(data) < 1 + NONCE_BYTES + 8 + tag_len or data[0] != WIRE_VERSION:
            raise MalformedEnvelope("bad envelope framing")
        pos = 1
        nonce = data[pos:pos + NONCE_BYTES]
        pos += NONCE_BYTES
        (alen,) = struct.unpack_from(">I", data, pos)
        pos += 4
        header = data[pos:pos + alen]
        pos += alen
        if pos + 4 > len(data):
            raise MalformedEnvelope("header length overruns envelope")
        (clen,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + clen + tag_len != len(data):
            raise MalformedEnvelope("ciphertext length does not match envelope size")
        ciphertext = data[pos:pos + clen]
        return cls(nonce, header, ciphertext, data[pos + clen:])

    def __len__(self):
        return 1 + NONCE_BYTES + 8 + len(self.header) + len(self.ciphertext) + len(self.tag)


def _subkeys(key: bytes):
    return H(bytes([TAG_AEAD_ENC]) + key), H(bytes([TAG_AEAD_MAC]) + key)


def _keystream_xor(ke: bytes, nonce: bytes, data: bytes) -> bytes:
    out = bytearray(len(data))
    for block in range(0, len(data), 32):
        ks = H(ke + nonce + be32(block // 32))
        chunk = data[block:block + 32]
        out[block:block + len(chunk)] = bytes(x ^ y for x, y in zip(chunk, ks))
    return bytes(out)


def _tag(km: bytes, nonce: bytes, header: bytes, ciphertext: bytes, tag_len: int) -> bytes:
    return H(km + nonce + be64(len(header)) + header + be64(len(ciphertext)) + ciphertext)[:tag_len]


def seal(key: bytes, nonce: bytes, header: bytes, plaintext: bytes, tag_len: int = TAG_BYTES) -> Envelope:
    if len(key) != 16:
        raise ValueError("key must be 16 bytes")
    if len(nonce) != NONCE_BYTES:
        raise ValueError("nonce must be 16 bytes")
    ke, km = _subkeys(key)
    c = _keystream_xor(ke, nonce, plaintext)
    return Envelope(nonce, bytes(header), c, _tag(km, nonce, header, c, tag_len))


def open_envelope(key: bytes, env: Envelope, tag_len: int = TAG_BYTES) -> bytes:
    """Verify the tag in constant time, then decrypt. Raises :class:`AuthFailure`."""
    if isinstance(env, (bytes, bytearray)):
        env = Envelope.from_bytes(bytes(env), tag_len)
    ke, km = _subkeys(key)
    expected = _tag(km, env.nonce, env.header, env.ciphertext, tag_len)
    if len(env.nonce) != NONCE_BYTES or not hmac.compare_digest(expected, env.tag):
        raise AuthFailure("envelope tag mismatch")
    return _keystream_xor(ke, env.nonce, env.ciphertext)


# Used where callers want a boolean probe instead of an exception.
def try_open(key: bytes, env, tag_len: int = TAG_BYTES) -> bytes | None:
    try:
        return open_envelope(key, env, tag_len)
    except AuthFailure:
        return None


__all__ = ["Envelope", "make_nonce", "open_envelope", "seal", "split_nonce", "try_open"]
