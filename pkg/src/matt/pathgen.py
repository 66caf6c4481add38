"""Confidence-guided inference paths.

For each instance, ``K`` paths start from an empty feature set.  In each of
``T`` rounds every remaining candidate feature is added independently with
probability proportional to the confidence of the combination it would form
with the path so far.  Each final set is scored with every other feature
masked, and the ``K`` scores are averaged with weights given by the
confidence of the final sets.

Two implementations share the exact same arithmetic and random numbers:

* the scalar operations (:func:`generate_path`, :func:`matt_predict`, ...)
  work on :class:`~matt.core.Instance` objects and any confidence source with
  a ``confidence(ComboKey)`` method;
* :func:`predict_many` runs all paths of a batch of instances at once on
  dense confidence matrices.

Randomness comes from :class:`~matt._hashing.PathStream`, keyed by
``(seed, instance id, path index)``; every round consumes one uniform per
field, so batching, sharding and thread count never change a prediction.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from ._hashing import PathStream, counter_uniforms, stream_keys
from .core import MASK, ComboKey, ConfigError, FeatureValue, Instance, InvalidInputError, canonical_combo

MODES = ("full", "rhp", "rcr", "rmr", "baseline")
WEIGHT_RULES = ("min", "geomean")


@dataclass
class MattParams:
    T: int = 10
    K: int = 8
    seed: int = 0
    mode: str = "full"
    weight_rule: str = "min"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.weight_rule not in WEIGHT_RULES:
            raise ConfigError(f"unknown weight rule {self.weight_rule!r}")
        if self.T < 1 or self.K < 1:
            raise ConfigError("T and K must be >= 1")

    @property
    def n_paths(self) -> int:
        return 1 if self.mode == "rmr" else self.K


@dataclass
class PathEnsemble:
    paths: list[tuple[FeatureValue, ...]]
    weights: list[float]
    scores: list[float]


class PlainConfidence:
    """Min-query estimates of a sketch built without peeling."""

    def __init__(self, sketch):
        if sketch.peeling:
            raise ConfigError("plain confidence needs a sketch built with peeling disabled")
        self.sketch = sketch
        self.max_order = sketch.max_order

    def confidence(self, combo: ComboKey) -> float:
        return float(self.sketch.variant_estimate_plain(combo))

    def confidence_matrix(self, X: np.ndarray) -> np.ndarray:
        return self.sketch.confidence_matrix(X, plain=True)


class TableConfidence:
    """Hand-set confidences, keyed by :class:`ComboKey`; anything missing is 0."""

    def __init__(self, table: dict, max_order: int = 2):
        self.table = {k if isinstance(k, ComboKey) else canonical_combo(k): float(v) for k, v in table.items()}
        self.max_order = max_order

    def confidence(self, combo: ComboKey) -> float:
        return self.table.get(combo, 0.0)


def _max_order(source) -> int:
    return getattr(source, "max_order", 2)


def confidence_matrix(source, X: np.ndarray) -> np.ndarray:
    """Dense ``(n, N, N)`` singleton/pair confidences for any confidence source."""
    if hasattr(source, "confidence_matrix"):
        return source.confidence_matrix(X)
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    n, N = X.shape
    C = np.zeros((n, N, N))
    for r in range(n):
        feats = [FeatureValue(f, int(v)) for f, v in enumerate(X[r])]
        for i in range(N):
            if feats[i].value == MASK:
                continue
            C[r, i, i] = pair_confidence(source, feats[i], ())
            for j in range(i + 1, N):
                if feats[j].value != MASK:
                    C[r, i, j] = C[r, j, i] = pair_confidence(source, feats[i], (feats[j],))
    return C


# -- scalar operations ------------------------------------------------------------

def pair_confidence(source, f: FeatureValue, path: Iterable[FeatureValue]) -> float:
    """Confidence of adding ``f`` to ``path``.

    The combination ``{f} | path`` is generally of higher order than the
    sketch tracks, so it is scored by its weakest tracked sub-combination
    containing ``f``: the minimum over pairs ``{f, g}`` when order 2 is the
    highest tracked order.  With only singletons tracked, the minimum of the
    singleton confidences is used.
    """
    path = tuple(path)
    if f in path:
        raise InvalidInputError(f"{f} is already on the path")
    if not path:
        return source.confidence(canonical_combo([f]))
    top = _max_order(source)
    if top == 1:
        return min(source.confidence(canonical_combo([g])) for g in (f,) + path)
    best = math.inf
    for size in range(1, min(top - 1, len(path)) + 1):
        for others in combinations(path, size):
            best = min(best, source.confidence(canonical_combo((f,) + others)))
    return best


def _normalize(h: Sequence[float]) -> list[float]:
    total = sum(h)
    n = len(h)
    if total > 0:
        probs = [x / total for x in h]
    else:
        probs = [1.0 / n] * n
    probs[-1] = 1.0 - sum(probs[:-1])
    return probs


def step_probabilities(source, path: Iterable[FeatureValue], candidates: Sequence[FeatureValue],
                       uniform: bool = False) -> list[float]:
    """Sampling probability of each candidate; they sum to exactly 1.

    Falls back to uniform probabilities when every candidate has zero
    confidence (or when ``uniform`` is set).  The last candidate takes the
    rounding residual.
    """
    if not candidates:
        raise InvalidInputError("no candidates to sample from")
    path = tuple(path)
    if uniform:
        return _normalize([1.0] * len(candidates))
    return _normalize([pair_confidence(source, f, path) for f in candidates])


def extend_path(path, candidates, probabilities, rng):
    """One round of independent Bernoulli trials, in candidate (field) order.

    ``rng`` is anything with ``random(size)`` or an array of pre-drawn
    uniforms aligned with ``candidates``.  Returns ``(path, candidates)``.
    """
    candidates = tuple(candidates)
    if len(probabilities) != len(candidates):
        raise InvalidInputError("one probability per candidate required")
    draws = rng.random(len(candidates)) if hasattr(rng, "random") else np.asarray(rng, dtype=np.float64)
    picked = tuple(c for c, p, u in zip(candidates, probabilities, draws) if u < p)
    left = tuple(c for c, p, u in zip(candidates, probabilities, draws) if not u < p)
    return tuple(path) + picked, left


def generate_path(instance: Instance, source, T: int, rng, uniform: bool = False) -> tuple[FeatureValue, ...]:
    """Grow one path for ``T`` rounds (or until no candidates remain).

    Each round draws one uniform per field so that the draw for a given
    field and round does not depend on earlier outcomes.
    """
    if T < 1:
        raise ConfigError("T must be >= 1")
    path: tuple[FeatureValue, ...] = ()
    candidates = instance.active()
    for _ in range(T):
        if not candidates:
            break
        u = rng.random(instance.n_fields)
        probs = step_probabilities(source, path, candidates, uniform)
        path, candidates = extend_path(path, candidates, probs, [u[c.field] for c in candidates])
    return tuple(sorted(path))


def path_weight(source, feature_set: Iterable[FeatureValue], rule: str = "min") -> float:
    """Aggregate confidence of a final feature set.

    Minimum (or geometric mean) over all tracked-order sub-combinations of
    order >= 2; a singleton set uses its own confidence, an empty set 0.
    """
    feats = tuple(sorted(feature_set))
    if not feats:
        return 0.0
    if len(feats) == 1:
        return source.confidence(canonical_combo(feats))
    top = _max_order(source)
    if top == 1:
        vals = [min(source.confidence(canonical_combo([a])), source.confidence(canonical_combo([b])))
                for a, b in combinations(feats, 2)]
    else:
        vals = [source.confidence(canonical_combo(c))
                for size in range(2, min(top, len(feats)) + 1)
                for c in combinations(feats, size)]
    if rule == "min":
        return min(vals)
    if rule == "geomean":
        if min(vals) <= 0:
            return 0.0
        # numpy ufuncs on arrays, as in the batched engine, so both agree to the bit
        logs = np.log(np.array(vals, dtype=np.float64))
        acc = 0.0
        for v in logs:
            acc += v
        return float(np.exp(np.array([acc / len(vals)]))[0])
    raise ConfigError(f"unknown weight rule {rule!r}")


def mask_instance(instance: Instance, feature_set: Iterable[FeatureValue]) -> Instance:
    keep = set(feature_set)
    if not keep <= set(instance.features):
        raise InvalidInputError("feature set is not drawn from this instance")
    return Instance(tuple(f if f in keep else FeatureValue(f.field, MASK) for f in instance.features),
                    instance.label)


def aggregate(scores: Sequence[float], raw_weights: Sequence[float]) -> float:
    """Confidence-weighted mean of path scores (plain mean if all weights are 0)."""
    if len(scores) != len(raw_weights):
        raise InvalidInputError("scores and weights differ in length")
    if not scores:
        raise InvalidInputError("need at least one path")
    total = 0.0
    for w in raw_weights:
        if w < 0:
            raise InvalidInputError("weights must be non-negative")
        total += w
    acc = 0.0
    if total > 0:
        for s, w in zip(scores, raw_weights):
            acc += (w / total) * s
    else:
        for s in scores:
            acc += s
        acc /= len(scores)
    return min(max(acc, min(scores)), max(scores))


def _predict_fn(scorer):
    return scorer.predict if hasattr(scorer, "predict") else scorer


def _sources(sketch, params: MattParams, plain_sketch=None):
    if params.mode == "rhp":
        if plain_sketch is None:
            raise ConfigError("mode rhp needs a sketch built with peeling disabled")
        src = PlainConfidence(plain_sketch)
        return src, src
    if sketch is None:
        raise ConfigError(f"mode {params.mode} needs a confidence sketch")
    return sketch, sketch


def matt_ensemble(instance: Instance, sketch, scorer, params: MattParams, instance_id: int = 0,
                  plain_sketch=None) -> PathEnsemble:
    sample_src, weight_src = _sources(sketch, params, plain_sketch)
    predict = _predict_fn(scorer)
    paths, weights, rows = [], [], []
    for k in range(params.n_paths):
        rng = PathStream(params.seed, instance_id, k)
        F = generate_path(instance, sample_src, params.T, rng, uniform=params.mode == "rcr")
        paths.append(F)
        if F:
            weights.append(path_weight(weight_src, F, params.weight_rule))
            rows.append(mask_instance(instance, F).values())
        else:
            weights.append(0.0)
            rows.append(instance.values())
    scores = [float(s) for s in predict(np.array(rows))]
    return PathEnsemble(paths, weights, scores)


def matt_predict(instance: Instance, sketch, scorer, params: MattParams | None = None,
                 instance_id: int = 0, plain_sketch=None) -> float:
    """MATT prediction for one instance (reference implementation)."""
    params = params or MattParams()
    if params.mode == "baseline":
        return float(_predict_fn(scorer)(instance.values()[None, :])[0])
    ens = matt_ensemble(instance, sketch, scorer, params, instance_id, plain_sketch)
    return aggregate(ens.scores, ens.weights)


# -- batched engine -----------------------------------------------------------------

def _batch_probabilities(H: np.ndarray, cand: np.ndarray, uniform: bool) -> np.ndarray:
    n, N = H.shape
    n_cand = cand.sum(axis=1)
    total = np.zeros(n)
    for j in range(N):
        total += np.where(cand[:, j], H[:, j], 0.0)
    use_uniform = (total <= 0) | uniform
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(use_uniform[:, None], 1.0 / np.maximum(n_cand, 1)[:, None], H / total[:, None])
    p = np.where(cand, p, 0.0)
    last = N - 1 - np.argmax(cand[:, ::-1], axis=1)
    acc = np.zeros(n)
    for j in range(N):
        acc += np.where(cand[:, j] & (last != j), p[:, j], 0.0)
    rows = np.arange(n)
    p[rows, last] = np.where(n_cand > 0, 1.0 - acc, 0.0)
    return p


def _batch_paths(X, C, keys, T, uniform):
    n, N = X.shape
    cand = X > 0
    sel = np.zeros((n, N), dtype=bool)
    idx = np.arange(N)
    H = C[:, idx, idx].copy()
    started = np.zeros(n, dtype=bool)
    for t in range(T):
        if not cand.any():
            break
        u = counter_uniforms(keys, np.arange(t * N, (t + 1) * N))
        p = _batch_probabilities(H, cand, uniform)
        add = cand & (u < p)
        if add.any():
            newmin = np.where(add[:, None, :], C, np.inf).min(axis=2)
            H = np.where(add.any(axis=1)[:, None], np.minimum(np.where(started[:, None], H, np.inf), newmin), H)
            sel |= add
            cand &= ~add
            started |= add.any(axis=1)
    return sel


def _batch_weights(sel: np.ndarray, C: np.ndarray, rule: str) -> np.ndarray:
    n, N = sel.shape
    size = sel.sum(axis=1)
    idx = np.arange(N)
    single = np.where(sel, C[:, idx, idx], 0.0).sum(axis=1)
    I, J = np.triu_indices(N, k=1)
    both = sel[:, I] & sel[:, J]
    vals = C[:, I, J]
    if rule == "min":
        pw = np.where(both, vals, np.inf).min(axis=1) if len(I) else np.full(n, np.inf)
    else:
        any_zero = (both & (vals <= 0)).any(axis=1)
        acc = np.zeros(n)
        with np.errstate(divide="ignore"):
            logs = np.log(np.where(both & (vals > 0), vals, 1.0))
        for q in range(len(I)):
            acc += np.where(both[:, q], logs[:, q], 0.0)
        count = np.maximum(both.sum(axis=1), 1)
        pw = np.where(any_zero, 0.0, np.exp(acc / count))
    return np.where(size == 0, 0.0, np.where(size == 1, single, pw))


def _predict_chunk(X, ids, sample_src, weight_src, predict, params: MattParams):
    n, N = X.shape
    C = confidence_matrix(sample_src, X)
    Cw = C if weight_src is sample_src else confidence_matrix(weight_src, X)
    K = params.n_paths
    scores = np.empty((K, n))
    weights = np.empty((K, n))
    for k in range(K):
        keys = stream_keys(params.seed, ids, k)
        sel = _batch_paths(X, C, keys, params.T, params.mode == "rcr")
        empty = ~sel.any(axis=1)
        Xm = np.where(sel | empty[:, None], X, 0)
        scores[k] = predict(Xm)
        weights[k] = np.where(empty, 0.0, _batch_weights(sel, Cw, params.weight_rule))
    total = np.zeros(n)
    for k in range(K):
        total += weights[k]
    acc = np.zeros(n)
    pos = total > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(K):
            acc += np.where(pos, (weights[k] / total) * scores[k], scores[k])
    acc = np.where(pos, acc, acc / K)
    return np.clip(acc, scores.min(axis=0), scores.max(axis=0))


def predict_many(X, sketch, scorer, params: MattParams | None = None, instance_ids=None,
                 plain_sketch=None, workers: int = 1, chunk_size: int = 2048) -> np.ndarray:
    """MATT predictions for every row of ``X`` (value ids, 0 = masked).

    ``instance_ids`` default to row positions; they key the random streams,
    so a row scored alone or inside any shard gets the same prediction.
    """
    params = params or MattParams()
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    n = len(X)
    ids = np.arange(n) if instance_ids is None else np.asarray(instance_ids, dtype=np.int64)
    predict = _predict_fn(scorer)
    if params.mode == "baseline":
        return np.asarray(predict(X), dtype=np.float64)
    sample_src, weight_src = _sources(sketch, params, plain_sketch)
    if max(_max_order(sample_src), _max_order(weight_src)) > 2:
        return np.array([matt_predict(Instance.from_values(X[i]), sketch, scorer, params, int(ids[i]),
                                      plain_sketch) for i in range(n)])
    bounds = [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]

    def run(b):
        s, e = b
        return _predict_chunk(X[s:e], ids[s:e], sample_src, weight_src, predict, params)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    return np.concatenate(parts) if parts else np.zeros(0)
