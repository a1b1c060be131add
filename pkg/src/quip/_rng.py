"""Seeded random streams.

All randomness flows from :func:`generator`, a Philox-4x64 counter-based
generator keyed by ``(seed, stream)``.  The key is the 128-bit integer
``seed | (stream << 64)``, so streams never collide for distinct pairs.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream ids used by the pipeline.  Row-wise rounding streams start at
# ROUNDING so that they cannot overlap the fixed ids.
U_LEFT = 1
U_RIGHT = 2
V_LEFT = 3
V_RIGHT = 4
ROW_PERM = 5
COL_PERM = 6
ROUNDING = 1 << 32


def generator(seed, stream=0):
    seed = int(seed)
    stream = int(stream)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if stream < 0 or stream > _MASK64:
        raise ValueError(f"stream must be an unsigned 64-bit integer, got {stream}")
    return np.random.Generator(np.random.Philox(key=seed | (stream << 64)))


def row_uniforms(seed, rows, cols, offset=0):
    """Uniform draws in [0, 1) with an independent stream per row.

    Row ``i`` always receives the same values for a given seed, whatever
    block of rows is requested, which keeps row-partitioned work identical
    to sequential work.
    """
    out = np.empty((rows, cols))
    for i in range(rows):
        out[i] = generator(seed, ROUNDING + offset + i).random(cols)
    return out
