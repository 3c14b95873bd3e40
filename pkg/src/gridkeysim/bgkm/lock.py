"""Secure-lock backend built on the Chinese remainder theorem.

Each member owns a prime modulus ``m_i``. The lock ``L`` is the unique value
below ``prod(m_i)`` whose residue modulo ``m_i`` is the group key masked with
a pad only that member can recompute.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import gmpy2

from ..errors import BackendMismatch
from ..primitives import TAG_LOCK_PAD, tagged_hash, xor_bytes
from .state import NONCE_BYTES, Backend, GroupKey, GroupState, MeterSecret, PublicInfo


def crt_solve(residues: Sequence[int], moduli: Sequence[int]) -> Tuple[int, int]:
    """Return ``(L, M)`` with ``L = r_i mod m_i`` for all i and ``0 <= L < M``.

    Moduli must be pairwise coprime. Pairs are merged up a balanced tree so
    that the big multiplications stay balanced.
    """
    if len(residues) != len(moduli) or not moduli:
        raise ValueError("need one residue per modulus")
    nodes = [(gmpy2.mpz(r) % m, gmpy2.mpz(m)) for r, m in zip(residues, moduli)]
    while len(nodes) > 1:
        merged = []
        for i in range(0, len(nodes) - 1, 2):
            (r1, m1), (r2, m2) = nodes[i], nodes[i + 1]
            t = ((r2 - r1) * gmpy2.invert(m1, m2)) % m2
            merged.append((r1 + m1 * t, m1 * m2))
        if len(nodes) % 2:
            merged.append(nodes[-1])
        nodes = merged
    r, m = nodes[0]
    return int(r), int(m)


def lock_pad(s: bytes, z: bytes, key_bytes: int) -> bytes:
    return tagged_hash(TAG_LOCK_PAD, s, z)[:key_bytes]


def lock_key_gen(state: GroupState, member_set):
    params = state.params
    if state.backend is not Backend.LOCK:
        raise BackendMismatch("group state is not configured for the lock backend")
    members = state.select(member_set)
    kb = params.key_bytes

    k = state.drbg.read(kb)
    z = state.drbg.read(NONCE_BYTES)
    residues = [int.from_bytes(xor_bytes(k, lock_pad(m.s, z, kb)), "big") for m in members]
    L, _ = crt_solve(residues, [m.crt_modulus for m in members])

    seq = state.next_seq()
    key = GroupKey(k, seq)
    pub = PublicInfo(Backend.LOCK, z, seq, len(members), lock=L)
    state.key, state.pub = key, pub
    state.members = tuple(m.meter_id for m in members)
    return key, pub


def lock_key_der(secret: MeterSecret, pub: PublicInfo, key_bytes: int = 16) -> GroupKey:
    if pub.backend is not Backend.LOCK:
        raise BackendMismatch("public info was not produced by the lock backend")
    if secret.crt_modulus is None:
        raise BackendMismatch(f"{secret.meter_id} holds no lock modulus")
    r = int(pub._mpz_lock % secret.crt_modulus) & ((1 << (8 * key_bytes)) - 1)
    k = xor_bytes(r.to_bytes(key_bytes, "big"), lock_pad(secret.s, pub.nonce, key_bytes))
    return GroupKey(k, pub.seq)
