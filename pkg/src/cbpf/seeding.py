"""Stable sub-seed derivation so every stage of a run has its own stream."""

import zlib


def derive_seed(base: int, *tags) -> int:
    """Deterministic 32-bit seed from a base seed and a tag path."""
    return zlib.crc32(repr((int(base),) + tags).encode())
