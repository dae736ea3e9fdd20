"""Named, counter-derived RNG substreams.

A single master seed fans out into independent PCG64 streams keyed by a
purpose name (and optional indices).  Streams are derived by hashing the
name into a spawn key, so adding a new consumer never perturbs existing
ones and any (seed, name, index) triple is reproducible in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Canonical stream names used by the experiment harness.
STREAM_ENV_TRAIN = "env-train"
STREAM_ENV_VAL = "env-val"
STREAM_ENV_TEST = "env-test"
STREAM_INIT = "init"
STREAM_ACTION = "action"
STREAM_BUFFER = "buffer"


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the generator for (master_seed, name, *indices).

    The same triple always yields the same stream; distinct triples are
    statistically independent.
    """
    key = (_name_key(name),) + tuple(int(i) for i in indices)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def substream_seed(master_seed: int, name: str, *indices: int) -> int:
    """Derive a 63-bit integer seed from a substream, e.g. for env.reset()."""
    gen = substream(master_seed, name, *indices)
    return int(gen.integers(0, 2**63 - 1))
