"""Counter-based random streams keyed by (seed, tag, ids...).

Every stream is a Philox generator whose key is derived from the experiment
seed and an integer spawn key, so a replicate block produces the same draws
no matter which worker runs it or in what order.
"""

import zlib

import numpy as np


def tag_id(tag):
    """Stable 32-bit integer for a string tag (``hash()`` is salted per process)."""
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed, *key):
    """Return an independent ``numpy.random.Generator`` for ``(seed, *key)``.

    ``key`` items may be non-negative ints or strings; strings are mapped
    through :func:`tag_id`.
    """
    if seed is None:
        raise ValueError("a seed is required; entropy-seeded streams are not allowed")
    spawn_key = tuple(tag_id(k) if isinstance(k, str) else int(k) for k in key)
    ss = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


def blocks(total, block_size):
    """Split ``total`` replicates into fixed-size blocks ``[(index, count), ...]``.

    Block boundaries depend only on ``total`` and ``block_size``, never on the
    worker count.
    """
    if total < 0 or block_size < 1:
        raise ValueError("need total >= 0 and block_size >= 1")
    out = []
    start = 0
    i = 0
    while start < total:
        n = min(block_size, total - start)
        out.append((i, n))
        start += n
        i += 1
    return out
