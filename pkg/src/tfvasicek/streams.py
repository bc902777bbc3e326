"""Index-addressed random streams.

Every random row is drawn from its own Philox generator keyed by
``SeedSequence(seed, spawn_key=prefix + (index,))``.  A row therefore
depends only on its address, so results are identical for any batch
size, ordering or thread count.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

SEED_MAX = 2**64 - 1
BLOCK = 4096


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) <= SEED_MAX:
        raise ValidationError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def generator(seed: int, key: tuple) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def normal_rows(seed: int, indices, width: int, prefix: tuple = ()) -> np.ndarray:
    """Standard normals of shape (len(indices), width); row r comes from stream prefix + (indices[r],)."""
    out = np.empty((len(indices), width))
    for r, i in enumerate(indices):
        out[r] = generator(seed, (*prefix, i)).standard_normal(width)
    return out


def normal_draws(seed: int, n: int, dim: int, prefix: tuple = ()) -> np.ndarray:
    """``n`` i.i.d. standard normal vectors of length ``dim``.

    Draws are produced in fixed blocks of ``BLOCK`` rows, one stream per
    block, so draw ``i`` is the same whatever ``n`` is.
    """
    out = np.empty((n, dim))
    for b, start in enumerate(range(0, n, BLOCK)):
        stop = min(start + BLOCK, n)
        block = generator(seed, (*prefix, b)).standard_normal((BLOCK, dim))
        out[start:stop] = block[: stop - start]
    return out
