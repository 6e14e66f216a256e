
import hashlib

import numpy as np


def derive_seed(master: int, *tags) -> int:
    """Seed for one randomness consumer, keyed by purpose tags.

    Each (master, tags) pair maps to its own stream, so adding a new consumer never
    shifts the draws of existing ones.
    """
    payload = repr((int(master),) + tuple(tags)).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(master: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *tags))
