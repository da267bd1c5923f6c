"""Named random sub-streams derived from a single integer seed."""

import zlib

import numpy as np


def stream_seed(seed: int, name: str) -> np.random.SeedSequence:
    """Seed sequence for the sub-stream ``name`` of ``seed``.

    Names are hashed with CRC32, so the mapping is stable across processes
    and Python versions (unlike ``hash``).
    """
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, name))


def derived_int(seed: int, name: str) -> int:
    """A 32-bit integer seed for ``name``; used where an API takes a plain int."""
    return int(stream_seed(seed, name).generate_state(1)[0])
