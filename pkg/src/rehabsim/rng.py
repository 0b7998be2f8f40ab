"""Named, counter-based random substreams.

Every consumer (patient, each sensor, adaptation, ...) gets its own Philox
stream keyed by (seed, name). Adding a new consumer never shifts the draws
seen by existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAM_NAMES = (
    "patient",
    "sensors.force",
    "sensors.imu",
    "sensors.pos",
    "adaptation",
    "disturbance",
    "schedule",
    "surrogate",
)


def stream(seed: int, name: str) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """Lazily created substreams for one episode."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            self._cache[name] = stream(self.seed, name)
        return self._cache[name]
