"""Hierarchical probabilistic hashing of feature-combination frequencies.

Each combination order ``m`` gets its own :class:`OrderSketch`: ``L`` hash
tables of signed counters plus a bounded min-heap of exactly-counted heavy
hitters.  When a combination enters the heap its estimated count is *peeled*
out of its table cells so the tables describe only the long tail.  Tail
combinations are scored with a Chebyshev-style lower bound computed from the
spread of their per-table readings.

All queries come in two flavours: scalar (a :class:`~matt.core.ComboKey`) and
vectorized (an int array of rows ``[f1, v1, f2, v2, ...]``).  The scalar
forms call the vectorized ones, so there is a single code path.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from itertools import combinations
from typing import BinaryIO, Iterable

import numpy as np

from . import _hashing
from ._kernels import observe_stream
from .core import ComboKey, ConfigError, Dataset, InvalidInputError, MattError, as_dataset

MAGIC = b"MATTSKCH"
VERSION = 1
DEFAULT_WIDTHS = {1: 2**18, 2: 2**20}
_FINGERPRINT_SEED = 0x5EED_F1A9_E4B1_7A11


@dataclass
class SketchConfig:
    max_order: int = 2
    n_tables: int = 4
    widths: dict[int, int] = field(default_factory=dict)
    capacities: dict[int, int] = field(default_factory=dict)
    alpha: float = 0.05
    peeling: bool = True
    seed: int = 0
    min_support: int = 10
    capacity_fraction: float = 0.001

    def __post_init__(self):
        if self.max_order < 1:
            raise ConfigError("max_order must be >= 1")
        if self.n_tables < 1:
            raise ConfigError("n_tables must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        self.widths = {int(k): int(v) for k, v in self.widths.items()}
        self.capacities = {int(k): int(v) for k, v in self.capacities.items()}

    def width(self, order: int) -> int:
        return self.widths.get(order, DEFAULT_WIDTHS.get(order, 2**20))

    def capacity_for(self, order: int, n_frequent: int) -> int:
        """Heap capacity: explicit override, else 0.1% of the frequent combos (at least 1)."""
        if order in self.capacities:
            return self.capacities[order]
        return max(1, math.ceil(n_frequent * self.capacity_fraction - 1e-9))


@dataclass(frozen=True)
class LowerBoundInputs:
    values: tuple[int, ...]
    n: int
    mu: float
    sigma: float
    upper: int
    k2: float


def lower_bound_inputs(readings: Iterable[int]) -> LowerBoundInputs:
    """Distribution summary of one combo's table readings (positive ones only)."""
    readings = [int(r) for r in readings]
    xs = tuple(r for r in readings if r > 0)
    if not xs:
        return LowerBoundInputs((), 0, 0.0, 0.0, 0, 0.0)
    mu, sigma = _moments(np.array([xs], dtype=np.float64), np.ones((1, len(xs)), bool))
    upper = max(0, min(readings))
    return LowerBoundInputs(xs, len(xs), float(mu[0]), float(sigma[0]), upper, float(mu[0]) - upper)


def _moments(R: np.ndarray, positive: np.ndarray):
    n = positive.sum(axis=1)
    safe_n = np.maximum(n, 1)
    A = np.where(positive, np.abs(R), 0.0)
    mu = A.sum(axis=1) / safe_n
    dev = np.where(positive, A - mu[:, None], 0.0)
    sigma = np.sqrt((dev * dev).sum(axis=1) / safe_n)
    return mu, sigma


def chebyshev_lower_bound(readings, alpha: float) -> np.ndarray:
    """Lower-bound confidence for each row of per-table ``readings``.

    With ``X`` the positive readings, ``mu``/``sigma`` their mean and
    population standard deviation and ``upper`` the min-query estimate::

        k2 = mu - upper
        bound = mu - 1 / sqrt(1/sigma**2 - alpha/k2**2)

    clipped to ``[0, upper]``.  Degenerate rows (no positive reading, zero
    spread, ``k2 == 0`` or a non-positive radicand) fall back to ``upper``
    (0 when nothing positive was read).
    """
    R = np.atleast_2d(np.asarray(readings, dtype=np.float64))
    positive = R > 0
    n = positive.sum(axis=1)
    upper = np.maximum(R.min(axis=1), 0.0)
    mu, sigma = _moments(R, positive)
    k2 = mu - upper
    out = upper.copy()
    ok = (n > 0) & (sigma > 0) & (k2 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(ok, 1.0 / np.where(ok, sigma, 1.0) ** 2 - alpha / np.where(ok, k2, 1.0) ** 2, 0.0)
        ok &= d > 0
        bound = mu - 1.0 / np.sqrt(np.where(ok, d, 1.0))
    out[ok] = np.clip(bound[ok], 0.0, upper[ok])
    out[n == 0] = 0.0
    return out


def _key_rows(combos) -> np.ndarray:
    if isinstance(combos, ComboKey):
        combos = [combos]
    if isinstance(combos, np.ndarray):
        return np.atleast_2d(combos).astype(np.int64)
    return np.array([c.row() for c in combos], dtype=np.int64)


class OrderSketch:
    """Hash tables and heavy-hitter heap for one combination order."""

    def __init__(self, order: int, n_tables: int, width: int, capacity: int,
                 seeds, peeling: bool = True):
        if width < 1:
            raise ConfigError("table width must be >= 1")
        if capacity < 0:
            raise ConfigError("heap capacity must be >= 0")
        self.order = order
        self.n_tables = n_tables
        self.width = width
        self.capacity = capacity if peeling else 0
        self.peeling = peeling
        self.seeds = np.asarray(seeds, dtype=np.uint64)
        if len(self.seeds) != n_tables or len(set(self.seeds.tolist())) != n_tables:
            raise ConfigError("need one distinct seed per table")
        self.tables = np.zeros((n_tables, width), dtype=np.int64)
        self.heap_rows = np.zeros((self.capacity, 2 * order), dtype=np.int64)
        self.heap_counts = np.zeros(self.capacity, dtype=np.int64)
        self.heap_seqs = np.zeros(self.capacity, dtype=np.int64)
        self.size = 0
        self.next_seq = 0
        self.total_events = 0
        self.distinct = 0
        self._index: tuple[np.ndarray, np.ndarray] | None = None

    # -- hashing -------------------------------------------------------
    def cells(self, rows: np.ndarray) -> np.ndarray:
        """Slot of each row in each table, shape ``(n, n_tables)``."""
        words = _hashing.combo_words(rows)
        out = np.empty((len(words), self.n_tables), dtype=np.int64)
        for j, seed in enumerate(self.seeds):
            out[:, j] = (_hashing.hash_words(words, seed) % np.uint64(self.width)).astype(np.int64)
        return out

    def _check_rows(self, rows: np.ndarray) -> np.ndarray:
        rows = _key_rows(rows)
        if rows.shape[1] != 2 * self.order:
            raise ConfigError(f"order-{rows.shape[1] // 2} combo queried on the order-{self.order} sketch")
        return rows

    # -- updates -------------------------------------------------------
    def observe_rows(self, rows, deltas=None) -> None:
        """Stream ``rows`` (in order) into the sketch, one observe per row."""
        rows = self._check_rows(rows)
        deltas = np.ones(len(rows), np.int64) if deltas is None else np.asarray(deltas, np.int64)
        if (deltas < 1).any():
            raise InvalidInputError("delta must be >= 1")
        uniq, events = np.unique(rows, axis=0, return_inverse=True)
        self._apply(uniq, events.reshape(-1).astype(np.int64), deltas)

    def _apply(self, uniq_rows: np.ndarray, events: np.ndarray, deltas: np.ndarray) -> None:
        n_distinct = len(uniq_rows)
        if self.size:
            merged = np.concatenate([uniq_rows, self.heap_rows[: self.size]])
            uniq_rows, inverse = np.unique(merged, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            events = np.where(events >= 0, inverse[np.maximum(events, 0)], -1)
            heap_local = inverse[n_distinct:]
        else:
            heap_local = np.zeros(0, dtype=np.int64)
        cells = self.cells(uniq_rows) if len(uniq_rows) else np.zeros((0, self.n_tables), np.int64)
        pos = np.full(len(uniq_rows), -1, dtype=np.int64)
        heap_ids = np.zeros(self.capacity, dtype=np.int64)
        heap_ids[: self.size] = heap_local
        pos[heap_local] = np.arange(self.size)
        self.size, self.next_seq = observe_stream(
            events, deltas, cells, self.tables, heap_ids, self.heap_counts, self.heap_seqs,
            pos, self.size, self.next_seq, self.peeling)
        self.heap_rows[: self.size] = uniq_rows[heap_ids[: self.size]]
        self.total_events += int(deltas[events >= 0].sum())
        self._index = None

    # -- queries -------------------------------------------------------
    def heap_slots(self, rows: np.ndarray) -> np.ndarray:
        """Heap slot of each row, -1 for non-members."""
        rows = self._check_rows(rows)
        out = np.full(len(rows), -1, dtype=np.int64)
        if self.size == 0 or len(rows) == 0:
            return out
        if self._index is None:
            fp = _hashing.hash_rows(self.heap_rows[: self.size], _FINGERPRINT_SEED)
            order = np.argsort(fp, kind="stable")
            self._index = (fp[order], order)
        sorted_fp, order = self._index
        fp = _hashing.hash_rows(rows, _FINGERPRINT_SEED)
        at = np.minimum(np.searchsorted(sorted_fp, fp), self.size - 1)
        cand = order[at]
        hit = (sorted_fp[at] == fp) & (self.heap_rows[cand] == rows).all(axis=1)
        out[hit] = cand[hit]
        return out

    def readings(self, rows: np.ndarray) -> np.ndarray:
        rows = self._check_rows(rows)
        cells = self.cells(rows)
        return self.tables[np.arange(self.n_tables)[None, :], cells]

    def estimate_upper(self, rows) -> np.ndarray:
        rows = self._check_rows(rows)
        out = np.maximum(self.readings(rows).min(axis=1), 0)
        slots = self.heap_slots(rows)
        member = slots >= 0
        out[member] = self.heap_counts[slots[member]]
        return out

    def lower_bound(self, rows, alpha: float) -> np.ndarray:
        return chebyshev_lower_bound(self.readings(rows), alpha)

    def confidence(self, rows, alpha: float) -> np.ndarray:
        rows = self._check_rows(rows)
        if len(rows) == 0:
            return np.zeros(0)
        out = chebyshev_lower_bound(self.readings(rows), alpha)
        slots = self.heap_slots(rows)
        member = slots >= 0
        out[member] = self.heap_counts[slots[member]]
        return out

    def plain_estimate(self, rows) -> np.ndarray:
        if self.peeling:
            raise ConfigError("plain estimates need a sketch built with peeling disabled")
        return np.maximum(self.readings(rows).min(axis=1), 0)

    def heap_items(self) -> list[tuple[ComboKey, int]]:
        """Heap contents as ``(key, exact count)``, largest count first."""
        items = [(_row_to_key(self.heap_rows[i]), int(self.heap_counts[i])) for i in range(self.size)]
        return sorted(items, key=lambda kv: (-kv[1], kv[0]))

    def stats(self) -> dict:
        load = float((self.tables > 0).mean()) if self.tables.size else 0.0
        return {
            "order": self.order,
            "distinct_estimate": int(self.distinct),
            "heap_capacity": int(self.capacity),
            "heap_fill": int(self.size),
            "load_factor": load,
        }


def _row_to_key(row) -> ComboKey:
    from .core import FeatureValue

    row = [int(x) for x in row]
    return ComboKey(tuple(FeatureValue(row[i], row[i + 1]) for i in range(0, len(row), 2)))


class ConfidenceSketch:
    """Per-order sketches ``1..max_order`` sharing one tail probability ``alpha``."""

    def __init__(self, config: SketchConfig | None = None, capacities: dict[int, int] | None = None):
        self.config = config = config or SketchConfig()
        self.alpha = config.alpha
        self.peeling = config.peeling
        capacities = capacities or {}
        self.per_order: list[OrderSketch] = []
        for m in range(1, config.max_order + 1):
            seeds = _hashing.derive_seeds(config.seed, m, count=config.n_tables)
            cap = capacities.get(m, config.capacities.get(m, 0))
            self.per_order.append(OrderSketch(m, config.n_tables, config.width(m), cap, seeds, config.peeling))

    @property
    def max_order(self) -> int:
        return len(self.per_order)

    def order_sketch(self, order: int) -> OrderSketch:
        if not 1 <= order <= self.max_order:
            raise ConfigError(f"order {order} is not tracked (max order {self.max_order})")
        return self.per_order[order - 1]

    @property
    def total_events(self) -> list[int]:
        return [s.total_events for s in self.per_order]

    # scalar API ----------------------------------------------------------
    def observe(self, combo: ComboKey, delta: int = 1) -> "ConfidenceSketch":
        if delta < 1:
            raise InvalidInputError("delta must be >= 1")
        self.order_sketch(combo.order).observe_rows(_key_rows(combo), [delta])
        return self

    def estimate_upper(self, combo: ComboKey) -> int:
        return int(self.order_sketch(combo.order).estimate_upper(_key_rows(combo))[0])

    def lower_bound(self, combo: ComboKey) -> float:
        return float(self.order_sketch(combo.order).lower_bound(_key_rows(combo), self.alpha)[0])

    def confidence(self, combo: ComboKey) -> float:
        return float(self.order_sketch(combo.order).confidence(_key_rows(combo), self.alpha)[0])

    def variant_estimate_plain(self, combo: ComboKey) -> int:
        return int(self.order_sketch(combo.order).plain_estimate(_key_rows(combo))[0])

    def in_heap(self, combo: ComboKey) -> bool:
        return bool(self.order_sketch(combo.order).heap_slots(_key_rows(combo))[0] >= 0)

    # vectorized API ------------------------------------------------------
    def confidence_rows(self, rows: np.ndarray, plain: bool = False) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.int64))
        sk = self.order_sketch(rows.shape[1] // 2)
        if plain:
            return sk.plain_estimate(rows).astype(np.float64)
        return sk.confidence(rows, self.alpha)

    def confidence_matrix(self, X: np.ndarray, plain: bool = False) -> np.ndarray:
        """Singleton confidences on the diagonal, pair confidences off it.

        Entries touching a masked feature are 0.  When order 2 is not
        tracked, a pair's confidence is the smaller singleton confidence.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        n, N = X.shape
        C = np.zeros((n, N, N), dtype=np.float64)
        fields = np.broadcast_to(np.arange(N), (n, N))
        active = X > 0
        singles = np.zeros((n, N))
        rows1 = np.stack([fields[active], X[active]], axis=1)
        if len(rows1):
            singles[active] = self.confidence_rows(rows1, plain)
        idx = np.arange(N)
        C[:, idx, idx] = singles
        if N < 2:
            return C
        I, J = np.triu_indices(N, k=1)
        if self.max_order >= 2:
            ok = active[:, I] & active[:, J]
            inst, p = np.nonzero(ok)
            vals = np.zeros((n, len(I)))
            if len(inst):
                rows2 = np.stack([I[p], X[inst, I[p]], J[p], X[inst, J[p]]], axis=1)
                vals[inst, p] = self.confidence_rows(rows2, plain)
        else:
            vals = np.minimum(singles[:, I], singles[:, J])
        C[:, I, J] = vals
        C[:, J, I] = vals
        return C

    def stats(self) -> list[dict]:
        return [s.stats() for s in self.per_order]

    # persistence ---------------------------------------------------------
    def save(self, path_or_file) -> None:
        if hasattr(path_or_file, "write"):
            _write_snapshot(self, path_or_file)
        else:
            with open(path_or_file, "wb") as fh:
                _write_snapshot(self, fh)

    @classmethod
    def load(cls, path_or_file) -> "ConfidenceSketch":
        if hasattr(path_or_file, "read"):
            return _read_snapshot(path_or_file)
        with open(path_or_file, "rb") as fh:
            return _read_snapshot(fh)

    def to_bytes(self) -> bytes:
        import io

        buf = io.BytesIO()
        _write_snapshot(self, buf)
        return buf.getvalue()


class SnapshotError(MattError):
    pass


def _write_snapshot(sk: ConfidenceSketch, fh: BinaryIO) -> None:
    fh.write(struct.pack("<8sIIdBq", MAGIC, VERSION, sk.max_order, sk.alpha, int(sk.peeling), sk.config.seed))
    for o in sk.per_order:
        fh.write(struct.pack("<IQQQQQQ", o.n_tables, o.width, o.capacity, o.size, o.next_seq,
                             o.total_events, o.distinct))
        fh.write(o.seeds.astype("<u8").tobytes())
    for o in sk.per_order:
        fh.write(o.tables.astype("<i8").tobytes())
    for o in sk.per_order:
        for i in range(o.size):
            fh.write(_row_to_key(o.heap_rows[i]).serialize())
            fh.write(struct.pack("<qq", o.heap_counts[i], o.heap_seqs[i]))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise SnapshotError("truncated sketch snapshot")
    return data


def _read_snapshot(fh: BinaryIO) -> ConfidenceSketch:
    head = struct.Struct("<8sIIdBq")
    magic, version, max_order, alpha, peeling, seed = head.unpack(_read_exact(fh, head.size))
    if magic != MAGIC:
        raise SnapshotError("not a sketch snapshot")
    if version != VERSION:
        raise SnapshotError(f"unsupported sketch snapshot version {version}")
    per = struct.Struct("<IQQQQQQ")
    orders = []
    for m in range(1, max_order + 1):
        L, W, cap, size, next_seq, total, distinct = per.unpack(_read_exact(fh, per.size))
        seeds = np.frombuffer(_read_exact(fh, 8 * L), dtype="<u8").astype(np.uint64)
        o = OrderSketch(m, L, W, cap, seeds, bool(peeling))
        o.capacity = cap
        o.heap_rows = np.zeros((cap, 2 * m), dtype=np.int64)
        o.heap_counts = np.zeros(cap, dtype=np.int64)
        o.heap_seqs = np.zeros(cap, dtype=np.int64)
        o.size, o.next_seq, o.total_events, o.distinct = size, next_seq, total, distinct
        orders.append(o)
    for o in orders:
        o.tables = np.frombuffer(_read_exact(fh, 8 * o.n_tables * o.width), dtype="<i8") \
            .astype(np.int64).reshape(o.n_tables, o.width)
    for o in orders:
        key_len = 4 * (1 + 2 * o.order)
        for i in range(o.size):
            key = ComboKey.deserialize(_read_exact(fh, key_len))
            o.heap_rows[i] = key.row()
            o.heap_counts[i], o.heap_seqs[i] = struct.unpack("<qq", _read_exact(fh, 16))
    if fh.read(1):
        raise SnapshotError("trailing bytes after sketch snapshot")
    widths = {o.order: o.width for o in orders}
    config = SketchConfig(max_order=max_order, n_tables=orders[0].n_tables, widths=widths,
                          capacities={o.order: o.capacity for o in orders}, alpha=alpha,
                          peeling=bool(peeling), seed=seed)
    sk = ConfidenceSketch.__new__(ConfidenceSketch)
    sk.config, sk.alpha, sk.peeling, sk.per_order = config, alpha, bool(peeling), orders
    return sk


def write_stats(sketch: ConfidenceSketch, fh) -> None:
    for rec in sketch.stats():
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


# -- construction ---------------------------------------------------------------

def combo_events(X: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense ids for every order-``order`` combo occurrence in ``X``.

    Returns ``(events, rows)``: ``events`` has shape ``(n, n_field_tuples)``
    in stream order (instance-major, field tuples lexicographic) with -1 where
    a member is masked; ``rows[id]`` is the combo row for each dense id.
    """
    X = np.asarray(X, dtype=np.int64)
    n, N = X.shape
    tuples = list(combinations(range(N), order))
    events = np.full((n, len(tuples)), -1, dtype=np.int64)
    row_blocks = []
    offset = 0
    maxv = X.max(axis=0) + 1 if n else np.ones(N, np.int64)
    for t, fields in enumerate(tuples):
        cols = X[:, fields]
        valid = (cols > 0).all(axis=1)
        if not valid.any():
            continue
        sub = cols[valid]
        radix = [int(maxv[f]) for f in fields]
        if math.prod(radix) < 2**62:
            code = np.zeros(len(sub), dtype=np.int64)
            for k in range(order):
                code = code * radix[k] + sub[:, k]
            _, first, inv = np.unique(code, return_index=True, return_inverse=True)
            uniq_vals = sub[first]
        else:
            uniq_vals, inv = np.unique(sub, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        events[valid, t] = inv + offset
        block = np.empty((len(uniq_vals), 2 * order), dtype=np.int64)
        block[:, 0::2] = np.array(fields)
        block[:, 1::2] = uniq_vals
        row_blocks.append(block)
        offset += len(uniq_vals)
    rows = np.concatenate(row_blocks) if row_blocks else np.zeros((0, 2 * order), np.int64)
    return events, rows


def build_sketch(dataset, config: SketchConfig | None = None) -> ConfidenceSketch:
    """Two-pass construction over a training set.

    Pass 1 counts distinct combos per order exactly and sizes each heap from
    the number of combos seen more than ``min_support`` times.  Pass 2 streams
    every combo occurrence, instance by instance, through ``observe``.
    """
    config = config or SketchConfig()
    data: Dataset = as_dataset(dataset)
    if len(data) == 0:
        raise InvalidInputError("cannot build a sketch from an empty dataset")
    if config.max_order > data.n_fields:
        raise ConfigError("max_order exceeds the number of fields")
    passes = []
    capacities = {}
    for m in range(1, config.max_order + 1):
        events, rows = combo_events(data.X, m)
        counts = np.bincount(events[events >= 0], minlength=len(rows))
        capacities[m] = config.capacity_for(m, int((counts > config.min_support).sum()))
        passes.append((events, rows))
    sketch = ConfidenceSketch(config, capacities)
    for o, (events, rows) in zip(sketch.per_order, passes):
        flat = events.reshape(-1)
        o._apply(rows, flat, np.ones(len(flat), dtype=np.int64))
        o.distinct = len(rows)
    return sketch
