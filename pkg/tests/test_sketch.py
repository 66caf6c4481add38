import io
import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matt.core import ConfigError, Dataset, InvalidInputError, canonical_combo, enumerate_combos
from matt.sketch import (ConfidenceSketch, SketchConfig, SnapshotError, build_sketch, chebyshev_lower_bound,
                         lower_bound_inputs, write_stats)

from . import oracles


def pair(a, b):
    return canonical_combo([(0, a), (1, b)])


def sketch(capacity=1, width=2**16, peeling=True, seed=0, max_order=2, n_tables=4):
    cfg = SketchConfig(max_order=max_order, n_tables=n_tables, widths={1: width, 2: width},
                       capacities={1: capacity, 2: capacity}, peeling=peeling, seed=seed)
    return ConfidenceSketch(cfg)


def test_first_admission_peels_fully():
    sk = sketch(capacity=1)
    c = pair(1, 1)
    sk.observe(c, 5)
    assert sk.in_heap(c)
    assert sk.estimate_upper(c) == 5
    assert (sk.order_sketch(2).readings(np.array([c.row()])) == 0).all()


def test_heap_member_counts_bypass_tables():
    sk = sketch(capacity=1)
    c = pair(1, 1)
    sk.observe(c, 5)
    before = sk.order_sketch(2).tables.copy()
    sk.observe(c, 3)
    assert sk.estimate_upper(c) == 8
    assert np.array_equal(before, sk.order_sketch(2).tables)


def test_eviction_restores_counts():
    sk = sketch(capacity=1)
    a, c = pair(1, 1), pair(2, 2)
    sk.observe(a, 5)
    for _ in range(5):
        sk.observe(c)
        assert not sk.in_heap(c)
    sk.observe(c, 2)
    assert sk.in_heap(c) and not sk.in_heap(a)
    assert sk.estimate_upper(c) == 7
    assert sk.estimate_upper(a) == 5
    assert (sk.order_sketch(2).readings(np.array([c.row()])) == 0).all()


def test_estimate_upper_basics():
    sk = sketch(capacity=1)
    assert sk.estimate_upper(pair(9, 9)) == 0
    big = pair(1, 1)
    sk.observe(big, 100)
    c = pair(2, 2)
    for _ in range(10):
        sk.observe(c)
    assert sk.estimate_upper(c) == 10
    assert sk.estimate_upper(big) == 100
    assert sk.confidence(big) == 100


def test_unseen_confidence_zero():
    assert sketch().confidence(pair(4, 4)) == 0.0


def test_lower_bound_worked_examples():
    assert chebyshev_lower_bound([10, 10, 10], 0.05)[0] == 10
    assert chebyshev_lower_bound([12, 8], 0.05)[0] == pytest.approx(7.948, abs=1e-3)
    assert chebyshev_lower_bound([1, 100], 0.05)[0] == 0.0
    assert chebyshev_lower_bound([0, 0], 0.05)[0] == 0.0


def test_lower_bound_inputs_summary():
    s = lower_bound_inputs([12, 8, 0])
    assert s.values == (12, 8) and s.n == 2
    assert s.mu == 10 and s.sigma == 2 and s.upper == 0 and s.k2 == 10


@given(st.lists(st.integers(0, 500), min_size=1, max_size=6), st.floats(0.001, 0.999))
def test_lower_bound_matches_oracle_and_bounds(readings, alpha):
    got = float(chebyshev_lower_bound(readings, alpha)[0])
    assert got == pytest.approx(oracles.chebyshev_by_hand(readings, alpha), rel=1e-9, abs=1e-9)
    assert 0.0 <= got <= max(min(readings), 0)


def test_plain_estimate_forced_collisions():
    sk = sketch(width=1, peeling=False, capacity=0)
    a, b = pair(1, 1), pair(2, 2)
    sk.observe(a, 5).observe(b, 3)
    assert sk.variant_estimate_plain(a) == 8
    assert sk.variant_estimate_plain(b) == 8
    assert sk.variant_estimate_plain(pair(3, 3)) == 8


def test_plain_estimate_collision_free():
    sk = sketch(peeling=False, capacity=0)
    c = pair(1, 1)
    for _ in range(10):
        sk.observe(c)
    assert sk.variant_estimate_plain(c) == 10


def test_plain_estimate_refused_on_peeled():
    with pytest.raises(ConfigError):
        sketch().variant_estimate_plain(pair(1, 1))


def test_order_out_of_range():
    sk = sketch(max_order=1)
    with pytest.raises(ConfigError):
        sk.observe(pair(1, 1))
    with pytest.raises(InvalidInputError):
        sk.observe(canonical_combo([(0, 1)]), 0)


def test_capacity_rule():
    cfg = SketchConfig()
    assert cfg.capacity_for(2, 23_000) == 23
    assert cfg.capacity_for(2, 0) == 1
    assert SketchConfig(capacities={2: 100}).capacity_for(2, 23_000) == 100


def test_build_one_instance():
    data = Dataset(np.array([[3, 1, 2]]), [1])
    sk = build_sketch(data, SketchConfig(max_order=1))
    for f, v in enumerate([3, 1, 2]):
        assert sk.confidence(canonical_combo([(f, v)])) == 1


def test_build_empty_rejected():
    with pytest.raises(InvalidInputError):
        build_sketch(Dataset(np.zeros((0, 3), dtype=np.int64), []))


def test_build_matches_scalar_observe():
    rng = np.random.default_rng(1)
    X = rng.integers(0, 6, size=(300, 5))
    cfg = SketchConfig(widths={1: 64, 2: 256}, capacities={1: 3, 2: 5}, seed=2)
    bulk = build_sketch(Dataset(X, np.zeros(300, int)), cfg)
    ref = ConfidenceSketch(cfg)
    for m in (1, 2):
        for row in X:
            inst = Dataset(row[None], [0])[0]
            for c in enumerate_combos(inst, 2):
                if c.order == m:
                    ref.observe(c)
    for a, b in zip(bulk.per_order, ref.per_order):
        assert np.array_equal(a.tables, b.tables)
        assert a.heap_items() == b.heap_items()


def test_build_counts_exact_when_wide():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 8, size=(500, 4))
    sk = build_sketch(Dataset(X, np.zeros(500, int)))
    exact = Counter(c for row in X for c in enumerate_combos(Dataset(row[None], [0])[0], 2))
    for c, n in exact.items():
        assert sk.estimate_upper(c) == n


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 40), st.integers(1, 40), st.integers(1, 4)), min_size=1, max_size=200),
       st.integers(0, 3))
def test_stream_against_dict_oracle(events, seed):
    """Collision-free regime: heap counts and estimates equal exact counts."""
    sk = sketch(capacity=4, width=2**16, seed=seed)
    exact = Counter()
    for a, b, d in events:
        sk.observe(pair(a, b), d)
        exact[pair(a, b)] += d
    for c, n in exact.items():
        assert sk.estimate_upper(c) == n
        assert sk.confidence(c) <= n


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.integers(1, 30)), min_size=1, max_size=300))
def test_upper_bound_under_collisions(events):
    sk = sketch(width=16, peeling=False, capacity=0)
    for a, b in events:
        sk.observe(pair(a, b))
    exact = Counter(pair(a, b) for a, b in events)
    for c, n in exact.items():
        assert sk.variant_estimate_plain(c) >= n


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.integers(1, 30)), min_size=1, max_size=300))
def test_lower_bound_below_upper_under_collisions(events):
    sk = sketch(width=8, capacity=3)
    for a, b in events:
        sk.observe(pair(a, b))
    for a, b in set(events):
        c = pair(a, b)
        if not sk.in_heap(c):
            assert 0 <= sk.lower_bound(c) <= sk.estimate_upper(c)


def test_heap_member_order_insensitive():
    big, others = pair(1, 1), [pair(i, i) for i in range(2, 6)]
    runs = []
    for interleave in (False, True):
        sk = sketch(capacity=1)
        sk.observe(big, 50)
        seq = [big] * 10 + others if not interleave else [x for o in others for x in (big, o)] + [big] * 6
        for c in seq:
            sk.observe(c)
        runs.append(sk.estimate_upper(big))
    assert runs == [60, 60]


def test_snapshot_roundtrip_and_determinism():
    rng = np.random.default_rng(5)
    X = rng.integers(0, 20, size=(400, 6))
    data = Dataset(X, np.zeros(400, int))
    cfg = SketchConfig(widths={1: 128, 2: 1024}, seed=4)
    a, b = build_sketch(data, cfg), build_sketch(data, cfg)
    assert a.to_bytes() == b.to_bytes()
    back = ConfidenceSketch.load(io.BytesIO(a.to_bytes()))
    assert back.to_bytes() == a.to_bytes()
    assert np.array_equal(back.confidence_matrix(X[:20]), a.confidence_matrix(X[:20]))


def test_snapshot_rejects_garbage():
    with pytest.raises(SnapshotError):
        ConfidenceSketch.load(io.BytesIO(b"nope"))
    blob = sketch().to_bytes()
    with pytest.raises(SnapshotError):
        ConfidenceSketch.load(io.BytesIO(blob[:-3]))


def test_confidence_matrix_matches_scalar():
    rng = np.random.default_rng(6)
    X = rng.integers(0, 5, size=(60, 4))
    sk = build_sketch(Dataset(X, np.zeros(60, int)), SketchConfig(widths={1: 16, 2: 32}, seed=1))
    C = sk.confidence_matrix(X[:10])
    for r in range(10):
        for i in range(4):
            for j in range(4):
                vi, vj = X[r, i], X[r, j]
                if vi == 0 or vj == 0:
                    assert C[r, i, j] == 0
                elif i == j:
                    assert C[r, i, i] == sk.confidence(canonical_combo([(i, vi)]))
                else:
                    assert C[r, i, j] == sk.confidence(canonical_combo([(i, vi), (j, vj)]))


def test_stats_records():
    sk = build_sketch(Dataset(np.array([[1, 2], [1, 3]]), [0, 1]), SketchConfig(max_order=1))
    buf = io.StringIO()
    write_stats(sk, buf)
    lines = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert len(lines) == 1
    assert set(lines[0]) == {"order", "distinct_estimate", "heap_capacity", "heap_fill", "load_factor"}
    assert lines[0]["distinct_estimate"] == 3
