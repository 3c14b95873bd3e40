"""GPRS-style collector <-> utility authentication and link ciphering.

A3, A8 and A5 are modelled as domain-separated keyed hashes that keep the
real interface widths: 128-bit RAND, 32-bit SRES, 64-bit Kc. Authentication
is one-way by construction: the SIM answers whoever sends it a RAND.
"""

from __future__ import annotations

import enum
import hmac
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from .errors import BadPin, SimLocked, UnknownImsi
from .primitives import TAG_A3, TAG_A5, TAG_A8, Drbg, be32, be64, tagged_hash
from .puf import Verdict

RAND_BYTES = 16
SRES_BYTES = 4
KC_BYTES = 8
PIN_ATTEMPTS = 3

UPLINK = 0
DOWNLINK = 1


def a3(ki: bytes, rand: bytes) -> bytes:
    return tagged_hash(TAG_A3, ki, rand)[:SRES_BYTES]


def a8(ki: bytes, rand: bytes) -> bytes:
    return tagged_hash(TAG_A8, ki, rand)[:KC_BYTES]


@dataclass
class SimCard:
    imsi: str
    ki: bytes = field(repr=False)
    pin: str = field(default="0000", repr=False)
    unlocked: bool = False
    attempts_left: int = PIN_ATTEMPTS

    def unlock(self, pin: str) -> None:
        if self.attempts_left == 0:
            raise SimLocked(f"SIM {self.imsi} is blocked")
        if not hmac.compare_digest(pin.encode(), self.pin.encode()):
            self.attempts_left -= 1
            if self.attempts_left == 0:
                raise SimLocked(f"SIM {self.imsi} blocked after {PIN_ATTEMPTS} bad PINs")
            raise BadPin(f"wrong PIN, {self.attempts_left} attempts left")
        self.attempts_left = PIN_ATTEMPTS
        self.unlocked = True

    def kc(self, rand: bytes) -> bytes:
        return a8(self.ki, rand)


@dataclass(frozen=True)
class AuthTriplet:
    rand: bytes
    sres: bytes
    kc: bytes = field(repr=False)


class AuthCenter:
    """AuC: holds subscriber keys and mints triplets with never-repeated RANDs."""

    def __init__(self, rng: Drbg):
        self._rng = rng
        self._keys: Dict[str, bytes] = {}
        self._issued: Set[bytes] = set()

    def register(self, imsi: str, ki: bytes) -> None:
        self._keys[imsi] = bytes(ki)

    def __contains__(self, imsi):
        return imsi in self._keys

    def gen_triplet(self, imsi: str) -> AuthTriplet:
        try:
            ki = self._keys[imsi]
        except KeyError:
            raise UnknownImsi(f"IMSI {imsi} not registered") from None
        rand = self._rng.read(RAND_BYTES)
        while rand in self._issued:
            rand = self._rng.read(RAND_BYTES)
        self._issued.add(rand)
        return AuthTriplet(rand, a3(ki, rand), a8(ki, rand))

    def expected_sres(self, imsi: str, rand: bytes) -> bytes:
        """What the AuC would compute for ``rand``; used to audit harvested pairs."""
        try:
            return a3(self._keys[imsi], rand)
        except KeyError:
            raise UnknownImsi(f"IMSI {imsi} not registered") from None


def gen_triplet(auc: AuthCenter, imsi: str) -> AuthTriplet:
    return auc.gen_triplet(imsi)


def sim_response(sim: SimCard, rand: bytes) -> bytes:
    # No check on who is asking: this is the one-way weakness.
    return a3(sim.ki, rand)


def verify(received_sres: bytes, triplet: AuthTriplet) -> Verdict:
    ok = hmac.compare_digest(bytes(received_sres), triplet.sres)
    return Verdict.ACCEPT if ok else Verdict.REJECT


def _a5_keystream(kc: bytes, direction: int, counter: int, length: int) -> bytes:
    out = bytearray()
    block = 0
    while len(out) < length:
        out += tagged_hash(TAG_A5, kc, bytes([direction]), be64(counter), be32(block))
        block += 1
    return bytes(out[:length])


@dataclass(frozen=True)
class Frame:
    direction: int
    counter: int
    payload: bytes
    encrypted: bool

    @property
    def flag(self) -> str:
        return "CIPHERED" if self.encrypted else "PLAINTEXT"


def cipher_frame(kc: Optional[bytes], direction: int, counter: int, payload: bytes) -> Frame:
    """XOR ``payload`` with the A5 keystream; without a Kc the frame goes out in clear."""
    if kc is None:
        return Frame(direction, counter, bytes(payload), encrypted=False)
    ks = _a5_keystream(kc, direction, counter, len(payload))
    return Frame(direction, counter, bytes(a ^ b for a, b in zip(payload, ks)), encrypted=True)


def decipher_frame(kc: Optional[bytes], frame: Frame) -> bytes:
    if not frame.encrypted:
        return frame.payload
    ks = _a5_keystream(kc, frame.direction, frame.counter, len(frame.payload))
    return bytes(a ^ b for a, b in zip(frame.payload, ks))


class GprsLink:
    """One collector's SIM talking to the utility's support node.

    Every message is appended to :attr:`transcript` as
    ``(direction, type, payload)``; :meth:`transcript_lines` renders the
    tab-separated log consumed by the threat harness.
    """

    def __init__(self, sim: SimCard, auc: AuthCenter):
        self.sim = sim
        self.auc = auc
        self.kc: Optional[bytes] = None
        self.counters = {UPLINK: 0, DOWNLINK: 0}
        self.transcript: List[tuple] = []

    @property
    def authenticated(self) -> bool:
        return self.kc is not None

    def _log(self, direction: str, kind: str, payload: bytes) -> None:
        self.transcript.append((direction, kind, bytes(payload)))

    def authenticate(self, responder=None) -> Verdict:
        """Run RAND -> SRES -> compare. ``responder`` defaults to the real SIM."""
        triplet = self.auc.gen_triplet(self.sim.imsi)
        self._log("DOWN", "RAND", triplet.rand)
        sres = (responder or (lambda r: sim_response(self.sim, r)))(triplet.rand)
        self._log("UP", "SRES", sres)
        verdict = verify(sres, triplet)
        self._log("DOWN", "AUTH_" + verdict.value, b"")
        if verdict:
            self.kc = triplet.kc
        return verdict

    def send(self, direction: int, payload: bytes) -> Frame:
        counter = self.counters[direction]
        self.counters[direction] += 1
        frame = cipher_frame(self.kc, direction, counter, payload)
        self._log("UP" if direction == UPLINK else "DOWN", "DATA_" + frame.flag, frame.payload)
        return frame

    def receive(self, frame: Frame) -> bytes:
        return decipher_frame(self.kc, frame)

    def transcript_lines(self) -> List[str]:
        return [f"{d}\t{k}\t{p.hex()}" for d, k, p in self.transcript]
