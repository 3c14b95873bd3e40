"""Broadcast group key management: Setup, SecGen, KeyGen, KeyDer and Re-Key.

Two interchangeable backends hide the group key in public information:
an access-control polynomial over a prime field (``Backend.ACP``) and a CRT
secure lock (``Backend.LOCK``). :func:`key_gen`, :func:`key_der` and
:func:`re_key` dispatch on the backend recorded in the state or public info.

>>> from gridkeysim import bgkm
>>> st = bgkm.setup(bgkm.SecurityParams(), bytes(32))
>>> for mid in ("M1", "M2", "M3", "M4"):
...     _ = bgkm.sec_gen(st, mid)
>>> key, pub = bgkm.key_gen(st, st.secrets)
>>> bgkm.key_der(st.secrets["M2"], pub, st.params) == key
True
"""

from __future__ import annotations

from .acp import acp_evaluate, acp_key_der, acp_key_gen, acp_publish, expand_roots
from .lock import crt_solve, lock_key_der, lock_key_gen, lock_pad
from .state import (
    MERSENNE_127,
    Backend,
    GroupKey,
    GroupState,
    MeterSecret,
    PublicInfo,
    SecurityParams,
    hash_to_field,
    payload_key,
    remove_member,
    sec_gen,
    setup,
)


def key_gen(state: GroupState, member_set):
    if state.backend is Backend.ACP:
        return acp_key_gen(state, member_set)
    return lock_key_gen(state, member_set)


def re_key(state: GroupState, updated_member_set):
    """Publish fresh public information (new key, new nonce) for the set.

    Secrets of retained members are never touched.
    """
    return key_gen(state, updated_member_set)


def key_der(secret: MeterSecret, pub: PublicInfo, params: SecurityParams = SecurityParams()) -> GroupKey:
    if pub.backend is Backend.ACP:
        return acp_key_der(secret, pub, params.field_prime, params.key_bytes)
    return lock_key_der(secret, pub, params.key_bytes)


__all__ = [
    "MERSENNE_127",
    "Backend",
    "GroupKey",
    "GroupState",
    "MeterSecret",
    "PublicInfo",
    "SecurityParams",
    "acp_evaluate",
    "acp_key_der",
    "acp_key_gen",
    "acp_publish",
    "crt_solve",
    "expand_roots",
    "hash_to_field",
    "key_der",
    "key_gen",
    "lock_key_der",
    "lock_key_gen",
    "lock_pad",
    "payload_key",
    "re_key",
    "remove_member",
    "sec_gen",
    "setup",
]
