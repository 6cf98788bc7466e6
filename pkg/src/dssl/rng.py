"""Named, independent random streams.

Each stream is a Philox (counter-based) generator keyed by the run seed and
a path of names, e.g. ``stream(seed, "init", "enc_c1")``. Two streams with
different names never share state, so any component can be regenerated on
its own.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *names: str) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))
