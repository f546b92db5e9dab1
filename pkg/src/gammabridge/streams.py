"""Purpose-tagged, counter-based random streams.

``stream(seed, tag, index)`` returns a Philox generator keyed by the seed,
a stable hash of the tag and the index. Streams with different tags or
indices never share state, so e.g. tau draws and gamma increments are
independent by construction, and chunked ensembles give the same result
for any worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

# paths are generated in chunks of this size; each chunk owns its streams
CHUNK_SIZE = 20_000

TAU = "tau"
PATH = "path"
JUMPS = "jumps"
ORACLE = "oracle"


def tag_code(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag_code(tag), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def chunks(n: int, size: int = CHUNK_SIZE):
    """Yield (chunk_index, start, stop) covering range(n)."""
    for k, start in enumerate(range(0, n, size)):
        yield k, start, min(start + size, n)


def derive_seed(seed: int, tag: str) -> int:
    """A 64-bit seed for a named sub-experiment."""
    digest = hashlib.blake2b(f"{int(seed)}:{tag}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
