"""
Seeded randomness for one run.

A single run seed is split into named substreams. Each substream is derived
from the run seed and its name with a stable hash, so drawing from one stream
never shifts the draws of another.
"""

import random
import zlib
from typing import Dict

MOBILITY = "mobility"
SWARM = "swarm"
LOSS = "loss"
SHADOWING = "shadowing"


def derive_seed(seed: int, tag: str) -> int:
    """XOR of the run seed with the tag's crc32. Distinct non-negative seeds give distinct substream seeds."""
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"run seeds must be non-negative, got {seed}")
    # zlib.crc32 rather than hash(): hash() is salted per process.
    crc = zlib.crc32(tag.encode("utf-8")) & 0xFFFFFFFF
    return seed ^ crc


class RandomStreams:
    def __init__(self, seed: int):
        self._seed = int(seed)
        self._streams: Dict[str, random.Random] = {}

    @property
    def seed(self) -> int:
        return self._seed

    def stream(self, name: str) -> random.Random:
        if name not in self._streams:
            self._streams[name] = random.Random(derive_seed(self._seed, name))
        return self._streams[name]
