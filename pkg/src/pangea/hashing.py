"""Stable hashing used for routing decisions.

Python's builtin hash() is salted per process, so every routing decision
(shuffle partitions, hash-buffer partitions, placement schemes) goes through
stable_hash64 instead. blake2b is deterministic across runs and platforms.
"""

from hashlib import blake2b


def stable_hash64(data: bytes, salt: bytes = b"") -> int:
    """64-bit hash of `data`, stable across processes and runs.

    `salt` derives an independent hash family member; placement schemes use
    it so two schemes route the same key independently.
    """
    h = blake2b(data, digest_size=8, key=salt[:64] if salt else b"")
    return int.from_bytes(h.digest(), "little")
