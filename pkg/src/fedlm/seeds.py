"""Deterministic derivation of named, independent random streams.

Every piece of randomness in an experiment (corpus sampling, corruption,
device assignment, weight init, cohort selection, per-client shuffling,
privacy noise) gets its own stream keyed by a purpose string plus integer
ids, all derived from one master seed. Streams never collide unless their
names do, and the derivation is stable across processes and platforms
(unlike Python's salted ``hash``).
"""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, purpose: str, *ids: int) -> int:
    """Return a 64-bit seed for the stream named (purpose, *ids)."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for part in (purpose, *ids):
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little")
