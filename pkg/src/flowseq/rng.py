"""Named RNG substreams derived from one run seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("augbase", "augment-noise", "init", "dropout", "shuffle", "synth")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; same (seed, name) gives the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
