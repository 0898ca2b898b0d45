"""Named, reproducible random substreams.

A single 64-bit master seed plus a textual stream name deterministically
yields an independent ``numpy.random.Generator``.  The name is hashed with
SHA-256 (stable across platforms and Python builds, unlike ``hash()``) and
the first 16 digest bytes are mixed into a ``SeedSequence`` together with
the master seed.  Streams with distinct names are statistically independent,
and adding new stream names never perturbs draws taken from existing ones.

Naming convention used throughout the simulator::

    init/<link>           initial environment sampling for one link
    evolve/<link>/<k>     per-snapshot evolution draws (counts, matching,
                          virtual delays, shadowing, initial phases)
    fit/<purpose>         test fixtures and synthetic-data generation
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np


def substream_key(name: str) -> tuple[int, int, int, int]:
    """Hash a stream name into four 32-bit words."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return struct.unpack("<4I", digest[:16])


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Create the named substream generator for a master seed."""
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *substream_key(name)])
    return np.random.default_rng(seq)
