"""Compiled inner loop of sketch construction.

The heap is an array-backed binary min-heap ordered by ``(count, seq)``;
``seq`` is an admission counter, so ties between equal counts are broken by
admission age and the structure is fully deterministic.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _less(counts, seqs, a, b):
    return counts[a] < counts[b] or (counts[a] == counts[b] and seqs[a] < seqs[b])


@njit(cache=True)
def _swap(ids, counts, seqs, pos, a, b):
    ids[a], ids[b] = ids[b], ids[a]
    counts[a], counts[b] = counts[b], counts[a]
    seqs[a], seqs[b] = seqs[b], seqs[a]
    pos[ids[a]] = a
    pos[ids[b]] = b


@njit(cache=True)
def _sift_up(ids, counts, seqs, pos, i):
    while i > 0:
        parent = (i - 1) // 2
        if _less(counts, seqs, i, parent):
            _swap(ids, counts, seqs, pos, i, parent)
            i = parent
        else:
            break


@njit(cache=True)
def _sift_down(ids, counts, seqs, pos, i, size):
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        right = left + 1
        if right < size and _less(counts, seqs, right, left):
            child = right
        if _less(counts, seqs, child, i):
            _swap(ids, counts, seqs, pos, i, child)
            i = child
        else:
            break


@njit(cache=True)
def observe_stream(events, deltas, cells, tables, heap_ids, heap_counts, heap_seqs,
                   pos, size, next_seq, peeling):
    """Apply ``events`` (dense combo ids, -1 = skip) in order.

    ``cells[id, j]`` is the slot of combo ``id`` in table ``j``.  Returns the
    new ``(size, next_seq)``; every array argument is updated in place.
    """
    n_tables = tables.shape[0]
    capacity = heap_ids.shape[0]
    for e in range(events.shape[0]):
        cid = events[e]
        if cid < 0:
            continue
        delta = deltas[e]
        if peeling and pos[cid] >= 0:
            slot = pos[cid]
            heap_counts[slot] += delta
            _sift_down(heap_ids, heap_counts, heap_seqs, pos, slot, size)
            continue
        est = np.int64(0)
        for j in range(n_tables):
            c = cells[cid, j]
            tables[j, c] += delta
            v = tables[j, c]
            if j == 0 or v < est:
                est = v
        if not peeling or capacity == 0:
            continue
        if size < capacity:
            slot = size
            size += 1
            heap_ids[slot] = cid
            heap_counts[slot] = est
            heap_seqs[slot] = next_seq
            next_seq += 1
            pos[cid] = slot
            _sift_up(heap_ids, heap_counts, heap_seqs, pos, slot)
            evicted = -1
            evicted_count = np.int64(0)
        elif est > heap_counts[0]:
            evicted = heap_ids[0]
            evicted_count = heap_counts[0]
            pos[evicted] = -1
            heap_ids[0] = cid
            heap_counts[0] = est
            heap_seqs[0] = next_seq
            next_seq += 1
            pos[cid] = 0
            _sift_down(heap_ids, heap_counts, heap_seqs, pos, 0, size)
        else:
            continue
        # peel the admitted combo's estimate out of its cells
        for j in range(n_tables):
            c = cells[cid, j]
            v = tables[j, c] - est
            tables[j, c] = v if v > 0 else 0
        if evicted >= 0:
            for j in range(n_tables):
                tables[j, cells[evicted, j]] += evicted_count
    return size, next_seq
