"""Labeled random streams forked from a single experiment seed."""

import zlib

import numpy as np


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``label`` under ``seed``.

    Streams with different labels never share state, so adding a new consumer
    does not perturb existing ones.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_label_key(label),))
    return np.random.Generator(np.random.PCG64(ss))


def fork_seed(seed: int, label: str) -> int:
    """Integer seed (31 bit) for components that take a plain int."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_label_key(label),))
    return int(ss.generate_state(1, dtype=np.uint32)[0] & 0x7FFFFFFF)
