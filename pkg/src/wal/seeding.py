"""Deterministic seed derivation.

One experiment seed fans out into per-component sub-seeds through a fixed
hash, so a single integer reproduces data generation, splits, annotator
corruption, weight init and batch order independently of call order.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(seed: int, *labels) -> int:
    """Derive a sub-seed for a named component from the experiment seed.

    Stable across platforms and library versions (pure blake2b of the
    seed and label path). Returns a non-negative int64.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little") % (2**63)


def rng_for(seed: int, *labels) -> np.random.Generator:
    """numpy Generator seeded from a derived sub-seed."""
    return np.random.default_rng(derive_seed(seed, *labels))


def torch_generator_for(seed: int, *labels) -> torch.Generator:
    """torch Generator seeded from a derived sub-seed."""
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, *labels))
    return gen


def hash_unit(payload: bytes, seed: int, *labels) -> float:
    """Deterministic uniform draw in [0, 1) keyed by payload bytes and seed.

    Used for per-sample randomness that must not depend on call order.
    """
    h = hashlib.blake2b(digest_size=8, key=_seed_key(seed, *labels))
    h.update(payload)
    return int.from_bytes(h.digest(), "little") / 2.0**64


def hash_int(payload: bytes, seed: int, bound: int, *labels) -> int:
    """Deterministic draw from {0, ..., bound-1} keyed by payload and seed."""
    h = hashlib.blake2b(digest_size=8, key=_seed_key(seed, *labels, "int"))
    h.update(payload)
    return int.from_bytes(h.digest(), "little") % bound


def _seed_key(seed: int, *labels) -> bytes:
    parts = [str(int(seed))] + [str(label) for label in labels]
    return hashlib.blake2b("/".join(parts).encode(), digest_size=16).digest()
