"""Counter-based random streams keyed by (seed, iteration, vertex, purpose).

Every random draw made by a sampler comes from a Philox stream whose key is
the chain seed and whose counter words carry the iteration, the vertex label
and a purpose tag.  Two draws with different keys never share counter blocks,
so the output of a sweep does not depend on the order (or the thread) in
which the vertices are visited.
"""
from __future__ import annotations

import hashlib
import threading
from enum import IntEnum

import numpy as np

_MASK64 = (1 << 64) - 1


class Purpose(IntEnum):
    SWEEP = 1
    ROOT = 2
    PIXELS = 3
    MH = 4
    INIT = 5
    MOVE = 6


def _key(seed: int) -> np.ndarray:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)


def _counter(iteration: int, vertex: int, purpose: int) -> np.ndarray:
    return np.array([0, vertex & _MASK64, iteration & _MASK64, int(purpose) & _MASK64],
                    dtype=np.uint64)


class StreamFactory:
    """Hands out reproducible generators for one chain.

    ``stream`` builds a fresh :class:`numpy.random.Generator`.  ``borrow``
    returns a thread-local generator re-keyed in place; it is much cheaper but
    is invalidated by the next ``borrow`` on the same thread, so it must only
    be used for a draw sequence that completes before the next request.
    Both produce identical numbers for identical keys.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = _key(self.seed)
        self._local = threading.local()

    def stream(self, iteration: int, vertex: int, purpose: int) -> np.random.Generator:
        bg = np.random.Philox(counter=_counter(iteration, vertex, purpose), key=self._key)
        return np.random.Generator(bg)

    def borrow(self, iteration: int, vertex: int, purpose: int) -> np.random.Generator:
        local = self._local
        gen = getattr(local, "gen", None)
        if gen is None:
            local.bg = np.random.Philox(key=self._key)
            local.gen = gen = np.random.Generator(local.bg)
        local.bg.state = {
            "bit_generator": "Philox",
            "state": {"counter": _counter(iteration, vertex, purpose), "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return gen


def derive_seed(master_seed: int, chain: int) -> int:
    """64-bit per-chain seed derived from the master seed and chain index."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(chain,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def digest_seed(*parts: object) -> int:
    """Deterministic 128-bit seed from arbitrary hashable content.

    Used where a draw must be a pure function of a state value (for example
    the pilot runs of the add move), not of the position in the chain.
    """
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        if isinstance(part, (bytes, bytearray)):
            h.update(bytes(part))
        else:
            h.update(repr(part).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def generator_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=_key(seed & ((1 << 128) - 1))))
