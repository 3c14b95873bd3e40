"""Access-control-polynomial backend.

The controller publishes ``P(x) = prod(x - x_i) + k`` over ``F_q`` where
``x_i = hash_to_field(s_i, z, q)``. A member evaluates ``P`` at its own point
and lands on ``k``; anyone else gets an unrelated field element.
"""

from __future__ import annotations

from typing import Iterable, List, Sequence

import gmpy2

from ..errors import BackendMismatch, RetriesExhausted
from .state import (
    NONCE_BYTES,
    Backend,
    GroupKey,
    GroupState,
    MeterSecret,
    PublicInfo,
    hash_to_field,
)

# Below this size schoolbook multiplication beats packing into big integers.
_KRONECKER_CUTOFF = 8


def _poly_mul(a: Sequence[int], b: Sequence[int], q: int) -> List[int]:
    m = min(len(a), len(b))
    if m <= _KRONECKER_CUTOFF:
        out = [0] * (len(a) + len(b) - 1)
        for i, x in enumerate(a):
            for j, y in enumerate(b):
                out[i + j] += x * y
        return [v % q for v in out]
    # Kronecker substitution: each slot must hold a sum of m products < q^2.
    slot = (2 * q.bit_length() + m.bit_length() + 8) // 8
    pa = int.from_bytes(b"".join(int(c).to_bytes(slot, "little") for c in a), "little")
    pb = int.from_bytes(b"".join(int(c).to_bytes(slot, "little") for c in b), "little")
    count = len(a) + len(b) - 1
    raw = int(gmpy2.mpz(pa) * gmpy2.mpz(pb)).to_bytes(slot * count, "little")
    return [int.from_bytes(raw[i * slot:(i + 1) * slot], "little") % q for i in range(count)]


def expand_roots(roots: Iterable[int], q: int) -> List[int]:
    """Coefficients (constant term first) of ``prod(x - r)`` over ``F_q``."""
    polys = [[(-r) % q, 1] for r in roots]
    if not polys:
        return [1]
    while len(polys) > 1:
        paired = [_poly_mul(polys[i], polys[i + 1], q) for i in range(0, len(polys) - 1, 2)]
        if len(polys) % 2:
            paired.append(polys[-1])
        polys = paired
    return polys[0]


def acp_publish(points: Iterable[int], k: int, q: int) -> List[int]:
    coeffs = expand_roots(points, q)
    coeffs[0] = (coeffs[0] + k) % q
    return coeffs


def acp_evaluate(coefficients: Sequence[int], x: int, q: int) -> int:
    """Horner evaluation; ``n`` multiplications and ``n`` additions."""
    acc = 0
    for c in reversed(coefficients):
        acc = (acc * x + c) % q
    return acc


def acp_key_gen(state: GroupState, member_set):
    params = state.params
    q = params.field_prime
    members = state.select(member_set)

    k = state.drbg.randbelow(q)
    for _ in range(params.max_keygen_retries + 1):
        z = state.drbg.read(NONCE_BYTES)
        points = [hash_to_field(m.s, z, q) for m in members]
        if len(set(points)) == len(points):
            break
    else:
        raise RetriesExhausted("member points keep colliding; field too small")

    coeffs = acp_publish(points, k, q)
    seq = state.next_seq()
    key = GroupKey(k.to_bytes(params.key_bytes, "big"), seq)
    pub = PublicInfo(Backend.ACP, z, seq, len(members), coefficients=tuple(coeffs))
    state.key, state.pub = key, pub
    state.members = tuple(m.meter_id for m in members)
    return key, pub


def acp_key_der(secret: MeterSecret, pub: PublicInfo, q: int, key_bytes: int = 16) -> GroupKey:
    if pub.backend is not Backend.ACP:
        raise BackendMismatch("public info was not produced by the ACP backend")
    x = gmpy2.mpz(hash_to_field(secret.s, pub.nonce, q))
    mq = gmpy2.mpz(q)
    acc = gmpy2.mpz(0)
    for c in pub._mpz_coefficients:
        acc = (acc * x + c) % mq
    # A non-member's value can exceed the key width when q > 2^(8*key_bytes).
    v = int(acc) & ((1 << (8 * key_bytes)) - 1)
    return GroupKey(v.to_bytes(key_bytes, "big"), pub.seq)
