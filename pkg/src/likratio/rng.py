"""Counter-based random streams keyed by integer paths.

Every random draw in the package comes from a Philox generator whose key
is derived from ``(seed, *path)``. Work split into chunks therefore gives
the same numbers however the chunks are scheduled.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "derive_seed", "check_seed"]


def check_seed(seed) -> int:
    if isinstance(seed, (bool, np.bool_)) or int(seed) != seed or seed < 0:
        raise ValueError(f"seed must be an unsigned integer, got {seed!r}")
    return int(seed)


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for the substream ``path`` of ``seed``."""
    ss = np.random.SeedSequence([check_seed(seed), *map(int, path)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path: int) -> int:
    """A 63-bit child seed, for APIs that take plain integers."""
    ss = np.random.SeedSequence([check_seed(seed), *map(int, path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
