"""Group-controller state, secrets and the broadcast public information."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Tuple

import gmpy2

from ..errors import (
    DuplicateMember,
    InvalidParams,
    MalformedPublicInfo,
    ModulusCollision,
    NonPrimeField,
    UnknownMember,
)
from ..primitives import (
    TAG_HASH_TO_FIELD,
    TAG_PAYLOAD_KEY,
    Drbg,
    is_probable_prime,
    tagged_hash,
)

MERSENNE_127 = (1 << 127) - 1
ELEMENT_BYTES = 16
NONCE_BYTES = 16
SECRET_BYTES = 32
WIRE_VERSION = 1
_HEADER = struct.Struct(">BBI16sI")


class Backend(enum.IntEnum):
    ACP = 1
    LOCK = 2

    @classmethod
    def parse(cls, name) -> "Backend":
        if isinstance(name, Backend):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown backend {name!r} (expected acp or lock)") from None


@dataclass(frozen=True)
class SecurityParams:
    field_prime: int = MERSENNE_127
    key_bytes: int = 16
    modulus_bits: int = 136
    max_keygen_retries: int = 16

    @classmethod
    def toy(cls, q: int = 97, **kw) -> "SecurityParams":
        return cls(field_prime=q, **kw)

    def validate(self) -> None:
        if not 1 <= self.key_bytes <= 16:
            raise InvalidParams("key_bytes must be in 1..16")
        if self.modulus_bits <= 8 * self.key_bytes:
            raise InvalidParams("modulus_bits must exceed the key width in bits")
        if self.field_prime.bit_length() > 8 * ELEMENT_BYTES:
            raise InvalidParams("field prime does not fit a 16-byte element")
        if self.field_prime > 1 << (8 * self.key_bytes):
            raise InvalidParams("field elements do not fit in key_bytes")
        if self.max_keygen_retries < 0:
            raise InvalidParams("max_keygen_retries must be non-negative")
        if not is_probable_prime(self.field_prime, 64):
            raise NonPrimeField(f"field modulus {self.field_prime} is not prime")


@dataclass(frozen=True)
class MeterSecret:
    meter_id: str
    s: bytes = field(repr=False)
    crt_modulus: Optional[int] = None

    def to_bytes(self) -> bytes:
        ident = self.meter_id.encode()
        m = b""
        if self.crt_modulus is not None:
            m = self.crt_modulus.to_bytes((self.crt_modulus.bit_length() + 7) // 8, "big")
        return struct.pack(">H", len(ident)) + ident + self.s + struct.pack(">H", len(m)) + m


@dataclass(frozen=True)
class GroupKey:
    k: bytes
    seq: int

    @property
    def value(self) -> int:
        return int.from_bytes(self.k, "big")


@dataclass(frozen=True)
class PublicInfo:
    backend: Backend
    nonce: bytes
    seq: int
    n: int
    coefficients: Optional[Tuple[int, ...]] = None
    lock: Optional[int] = None

    @cached_property
    def _mpz_coefficients(self):
        return [gmpy2.mpz(c) for c in reversed(self.coefficients)]

    @cached_property
    def _mpz_lock(self):
        return gmpy2.mpz(self.lock)

    @property
    def body_size(self) -> int:
        """Bytes carried by the key-hiding body (coefficients or lock value)."""
        if self.backend is Backend.ACP:
            return len(self.coefficients) * ELEMENT_BYTES
        return (self.lock.bit_length() + 7) // 8

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(WIRE_VERSION, int(self.backend), self.seq, self.nonce, self.n)
        if self.backend is Backend.ACP:
            body = b"".join(c.to_bytes(ELEMENT_BYTES, "big") for c in self.coefficients)
        else:
            raw = self.lock.to_bytes((self.lock.bit_length() + 7) // 8, "big")
            body = struct.pack(">I", len(raw)) + raw
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicInfo":
        if len(data) < _HEADER.size:
            raise MalformedPublicInfo("truncated header")
        version, backend, seq, nonce, n = _HEADER.unpack_from(data)
        if version != WIRE_VERSION:
            raise MalformedPublicInfo(f"unsupported version {version}")
        body = data[_HEADER.size:]
        if backend == Backend.ACP:
            if len(body) != (n + 1) * ELEMENT_BYTES:
                raise MalformedPublicInfo("coefficient count does not match n")
            coeffs = tuple(
                int.from_bytes(body[i:i + ELEMENT_BYTES], "big")
                for i in range(0, len(body), ELEMENT_BYTES)
            )
            return cls(Backend.ACP, nonce, seq, n, coefficients=coeffs)
        if backend == Backend.LOCK:
            if len(body) < 4:
                raise MalformedPublicInfo("truncated lock length")
            (length,) = struct.unpack_from(">I", body)
            if len(body) != 4 + length:
                raise MalformedPublicInfo("lock length mismatch")
            return cls(Backend.LOCK, nonce, seq, n, lock=int.from_bytes(body[4:], "big"))
        raise MalformedPublicInfo(f"unknown backend tag {backend}")


@dataclass
class GroupState:
    params: SecurityParams
    backend: Backend
    drbg: Drbg = field(repr=False)
    secrets: Dict[str, MeterSecret] = field(default_factory=dict, repr=False)
    seq: int = 0
    key: Optional[GroupKey] = field(default=None, repr=False)
    pub: Optional[PublicInfo] = None
    members: Tuple[str, ...] = ()

    def select(self, member_set: Iterable[str]) -> List[MeterSecret]:
        """Secrets for ``member_set`` in enrollment order."""
        wanted = set(member_set)
        if not wanted:
            raise UnknownMember("member set is empty")
        missing = wanted.difference(self.secrets)
        if missing:
            raise UnknownMember(f"not enrolled: {sorted(missing)}")
        return [sec for mid, sec in self.secrets.items() if mid in wanted]

    def next_seq(self) -> int:
        if self.seq >= 0xFFFFFFFF:
            raise InvalidParams("key sequence number exhausted")
        self.seq += 1
        return self.seq


def setup(params: SecurityParams, drbg_seed: bytes, backend=Backend.ACP) -> GroupState:
    params.validate()
    return GroupState(params=params, backend=Backend.parse(backend), drbg=Drbg(drbg_seed))


def _draw_prime(drbg: Drbg, bits: int) -> int:
    top = 1 << (bits - 1)
    while True:
        v = drbg.randbits(bits) | top | 1
        if is_probable_prime(v, 64):
            return v


def sec_gen(state: GroupState, meter_id: str, secret: Optional[bytes] = None) -> MeterSecret:
    """Enroll ``meter_id`` and return its secret.

    ``secret`` lets the caller register externally generated material (the
    PUF feedback loop); otherwise a fresh 32-byte value is drawn.
    """
    if meter_id in state.secrets:
        raise DuplicateMember(f"{meter_id} already enrolled")
    if secret is None:
        secret = state.drbg.read(SECRET_BYTES)
    elif len(secret) != SECRET_BYTES:
        raise InvalidParams("meter secret must be 32 bytes")
    if any(sec.s == secret for sec in state.secrets.values()):
        raise DuplicateMember(f"secret for {meter_id} is not unique")

    modulus = None
    if state.backend is Backend.LOCK:
        taken = {sec.crt_modulus for sec in state.secrets.values()}
        for _ in range(state.params.max_keygen_retries + 1):
            candidate = _draw_prime(state.drbg, state.params.modulus_bits)
            if candidate not in taken:
                modulus = candidate
                break
        else:
            raise ModulusCollision(f"no fresh modulus for {meter_id}")

    sec = MeterSecret(meter_id, bytes(secret), modulus)
    state.secrets[meter_id] = sec
    return sec


def remove_member(state: GroupState, meter_id: str) -> MeterSecret:
    try:
        return state.secrets.pop(meter_id)
    except KeyError:
        raise UnknownMember(f"{meter_id} is not enrolled") from None


def hash_to_field(s: bytes, z: bytes, q: int) -> int:
    return int.from_bytes(tagged_hash(TAG_HASH_TO_FIELD, s, z), "big") % q


def payload_key(k: GroupKey) -> bytes:
    padded = k.value.to_bytes(16, "big")
    return tagged_hash(TAG_PAYLOAD_KEY, padded)[:16]
