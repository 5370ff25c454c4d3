"""Deterministic random streams.

A master seed expands into independent streams keyed by (chain index,
purpose tag). The derivation is a pure function of the key, so concurrent
chains reproduce regardless of scheduling::

    SeedSequence([master, chain_index, crc32(tag)])
"""

from __future__ import annotations

import zlib

import numpy as np


class Stream(np.random.Generator):
    """PCG64 generator that remembers how it was derived."""

    def __init__(self, master: int, chain: int = 0, tag: str = "main"):
        self.info = {"master": int(master), "chain": int(chain), "tag": tag}
        seq = np.random.SeedSequence([int(master), int(chain), tag_code(tag)])
        super().__init__(np.random.PCG64(seq))


def tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(master: int, chain: int = 0, tag: str = "main") -> Stream:
    return Stream(master, chain, tag)


def seed_info(rng) -> dict:
    return dict(getattr(rng, "info", {"master": None, "chain": None, "tag": "external"}))
