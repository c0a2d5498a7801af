"""Deterministic seed plumbing.

Every random decision in the pipeline draws from a numpy Generator whose
seed is derived from one global seed plus a named stream, e.g.
``derive_seed(global_seed, "sanitize", run, variant, user)``.  The
derivation is a SHA-256 hash of the stringified parts, so streams are
independent, stable across platforms, and reproducible from the global
seed alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(*parts) -> int:
    """Hash an arbitrary tuple of parts into a 63-bit stream seed."""
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def generator(*parts) -> np.random.Generator:
    """A PCG64 generator seeded from ``derive_seed(*parts)``."""
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))
