"""Seeded stable hashing helpers.

Everything in the package that needs a hash uses these functions so that
runs are reproducible across processes and Python versions (the builtin
``hash`` is salted per process and unusable here).
"""

import hashlib


def stable_hash64(text: str, seed: int = 0) -> int:
    """Return a 64-bit hash of ``text`` keyed by ``seed``.

    blake2b in keyed mode gives good avalanche behavior; the seed allows
    rotating the hash function (e.g. on network reestablishment) without
    touching call sites.
    """
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(text.encode("utf-8"), key=key, digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def derive_seed(seed: int, label: str) -> int:
    """Derive an independent 63-bit stream seed from a master seed and label."""
    return stable_hash64(label, seed) & 0x7FFFFFFFFFFFFFFF
