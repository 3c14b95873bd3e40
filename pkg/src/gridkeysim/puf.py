"""Simulated PUFs, challenge-response enrollment and feedback-loop secrets.

A device's physical randomness is modelled as a keyed hash under a hidden
seed that never leaves the :class:`SimPuf` object. Nothing in this module
serialises that seed; the CRP store only ever holds challenges and
responses.
"""

from __future__ import annotations

import enum
import hmac
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Optional

from .errors import DuplicateEnrollment, NoisyPufUnsupported, UnknownDevice
from .primitives import (
    TAG_PUF,
    TAG_PUF_FEEDBACK,
    TAG_PUF_HARDENED,
    Drbg,
    tagged_hash,
)

CHALLENGE_BYTES = 16
RESPONSE_BYTES = 16
DEFAULT_ITERATIONS = 8


class Verdict(enum.Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"

    def __bool__(self):
        return self is Verdict.ACCEPT


@dataclass
class SimPuf:
    device_id: str
    hidden_seed: bytes = field(repr=False)
    noise_rate: float = 0.0
    noise_rng: Optional[Drbg] = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.noise_rate < 0.5:
            raise ValueError("noise_rate must be in [0, 0.5)")
        if self.noise_rate and self.noise_rng is None:
            self.noise_rng = Drbg(tagged_hash(TAG_PUF, self.hidden_seed, b"noise"))

    def __getstate__(self):
        raise TypeError("SimPuf holds physical secrets and cannot be serialised")


def puf_eval(puf: SimPuf, challenge: bytes) -> bytes:
    r = tagged_hash(TAG_PUF, puf.hidden_seed, challenge)[:RESPONSE_BYTES]
    if not puf.noise_rate:
        return r
    flips = 0
    for bit in range(8 * RESPONSE_BYTES):
        if puf.noise_rng.random() < puf.noise_rate:
            flips |= 1 << bit
    return (int.from_bytes(r, "big") ^ flips).to_bytes(RESPONSE_BYTES, "big")


@dataclass(frozen=True)
class ChallengeResponsePair:
    device_id: str
    challenge: bytes
    response: bytes

    def to_bytes(self) -> bytes:
        ident = self.device_id.encode()
        return struct.pack(">H", len(ident)) + ident + self.challenge + self.response


class CrpStore:
    """Utility-side table of enrollment records, keyed by device id."""

    def __init__(self):
        self._records: Dict[str, ChallengeResponsePair] = {}

    def __contains__(self, device_id):
        return device_id in self._records

    def __len__(self):
        return len(self._records)

    def __iter__(self) -> Iterator[ChallengeResponsePair]:
        return iter(self._records.values())

    def add(self, crp: ChallengeResponsePair) -> None:
        if crp.device_id in self._records:
            raise DuplicateEnrollment(f"{crp.device_id} already enrolled")
        self._records[crp.device_id] = crp

    def get(self, device_id: str) -> ChallengeResponsePair:
        try:
            return self._records[device_id]
        except KeyError:
            raise UnknownDevice(f"no CRP for {device_id}") from None

    def remove(self, device_id: str) -> None:
        self._records.pop(device_id, None)

    def to_bytes(self) -> bytes:
        return b"".join(crp.to_bytes() for crp in self._records.values())

    @classmethod
    def from_bytes(cls, data: bytes) -> "CrpStore":
        store = cls()
        pos = 0
        while pos < len(data):
            (n,) = struct.unpack_from(">H", data, pos)
            pos += 2
            ident = data[pos:pos + n].decode()
            pos += n
            c = data[pos:pos + CHALLENGE_BYTES]
            r = data[pos + CHALLENGE_BYTES:pos + CHALLENGE_BYTES + RESPONSE_BYTES]
            if len(r) != RESPONSE_BYTES:
                raise ValueError("truncated CRP record")
            pos += CHALLENGE_BYTES + RESPONSE_BYTES
            store.add(ChallengeResponsePair(ident, c, r))
        return store


def enroll(puf: SimPuf, store: CrpStore, rng: Drbg) -> ChallengeResponsePair:
    if puf.device_id in store:
        raise DuplicateEnrollment(f"{puf.device_id} already enrolled")
    challenge = rng.read(CHALLENGE_BYTES)
    crp = ChallengeResponsePair(puf.device_id, challenge, puf_eval(puf, challenge))
    store.add(crp)
    return crp


Responder = Callable[[bytes], bytes]
HardenedResponder = Callable[[bytes, bytes], bytes]


def genuine_responder(puf: SimPuf) -> Responder:
    return lambda challenge: puf_eval(puf, challenge)


def hardened_reply(response: bytes, nonce: bytes) -> bytes:
    return tagged_hash(TAG_PUF_HARDENED, response, nonce)[:RESPONSE_BYTES]


def genuine_hardened_responder(puf: SimPuf) -> HardenedResponder:
    return lambda challenge, nonce: hardened_reply(puf_eval(puf, challenge), nonce)


def authenticate(store: CrpStore, device_id: str, responder: Responder) -> Verdict:
    """Send the stored challenge; accept iff the reply equals the stored response."""
    crp = store.get(device_id)
    reply = responder(crp.challenge)
    ok = hmac.compare_digest(bytes(reply), crp.response)
    return Verdict.ACCEPT if ok else Verdict.REJECT


def authenticate_hardened(
    store: CrpStore, device_id: str, responder: HardenedResponder, rng: Drbg
) -> Verdict:
    """Challenge plus a fresh nonce; the reply must bind the response to it."""
    crp = store.get(device_id)
    nonce = rng.read(16)
    reply = responder(crp.challenge, nonce)
    ok = hmac.compare_digest(bytes(reply), hardened_reply(crp.response, nonce))
    return Verdict.ACCEPT if ok else Verdict.REJECT


def secret_gen_feedback(puf: SimPuf, c0: bytes, r: int = DEFAULT_ITERATIONS) -> bytes:
    """Feed each response back as the next challenge ``r`` times, then hash.

    The result is regenerated on demand and never stored on the device.
    """
    if puf.noise_rate:
        raise NoisyPufUnsupported("feedback secrets need a noise-free PUF")
    if r < 0:
        raise ValueError("iteration count must be non-negative")
    resp = puf_eval(puf, c0)
    for _ in range(r):
        resp = puf_eval(puf, resp)
    return tagged_hash(TAG_PUF_FEEDBACK, resp)


def hamming(a: bytes, b: bytes) -> int:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).bit_count()
