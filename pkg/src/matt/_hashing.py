"""64-bit mixing used for table hashing, heap fingerprints and path randomness.

Everything here is vectorized over numpy ``uint64`` arrays and wraps modulo
2**64, so results are identical however the inputs are batched.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)


def mix64(z):
    """splitmix64 finalizer; ``z`` must be a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _u64(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x).astype(np.uint64))


def combo_words(rows: np.ndarray) -> np.ndarray:
    """Serialized words of combo rows ``[f1, v1, f2, v2, ...]``.

    Word 0 is the order, word i is ``field_i << 32 | value_i`` -- the same
    byte sequence as :meth:`ComboKey.serialize`, read as 64-bit words.
    """
    rows = np.asarray(rows, dtype=np.int64)
    n, width = rows.shape
    m = width // 2
    words = np.empty((n, m + 1), dtype=np.uint64)
    words[:, 0] = m
    fields = rows[:, 0::2].astype(np.uint64)
    values = rows[:, 1::2].astype(np.uint64)
    words[:, 1:] = (fields << np.uint64(32)) | values
    return words


def hash_words(words: np.ndarray, seed) -> np.ndarray:
    h = np.full(len(words), np.uint64(seed), dtype=np.uint64)
    for j in range(words.shape[1]):
        h = mix64(h ^ mix64(words[:, j] + GOLDEN))
    return h


def hash_rows(rows: np.ndarray, seed) -> np.ndarray:
    return hash_words(combo_words(rows), seed)


def derive_seeds(seed: int, *path: int, count: int = 1) -> np.ndarray:
    """``count`` well-separated 64-bit seeds derived from ``(seed, *path)``."""
    h = mix64(_u64(seed & 0xFFFFFFFFFFFFFFFF) + GOLDEN)
    for p in path:
        h = mix64(h ^ mix64(_u64(p) + GOLDEN))
    return mix64(h + np.arange(1, count + 1, dtype=np.uint64) * GOLDEN)


def stream_keys(seed: int, instance_ids, path_index: int) -> np.ndarray:
    """One key per ``(seed, instance id, path index)`` stream."""
    ids = np.asarray(instance_ids, dtype=np.int64).astype(np.uint64)
    base = mix64(_u64(seed & 0xFFFFFFFFFFFFFFFF) + GOLDEN)
    h = mix64(base ^ mix64(ids + GOLDEN))
    return mix64(h ^ mix64(_u64(path_index) * GOLDEN + GOLDEN))


def counter_uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) for every (key, counter) pair: shape ``keys x counters``."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    z = mix64(keys[:, None] ^ mix64(counters[None, :] * GOLDEN + np.uint64(1)))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


class PathStream:
    """Counter-based uniform stream for one inference path.

    Exposes ``random(size)`` like :class:`numpy.random.Generator`; the i-th
    number drawn depends only on ``(seed, instance_id, path_index, i)``, so
    paths can be generated in any order or batch and still replay exactly.
    """

    def __init__(self, seed: int, instance_id: int, path_index: int):
        self.key = stream_keys(seed, [instance_id], path_index)
        self.counter = 0

    def random(self, size: int) -> np.ndarray:
        out = counter_uniforms(self.key, np.arange(self.counter, self.counter + size))[0]
        self.counter += size
        return out
