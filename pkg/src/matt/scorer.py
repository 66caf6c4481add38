"""Reference factorization-machine CTR scorer, its trainer, and ranking metrics.

Any object with ``predict(X) -> probabilities`` can be wrapped by the path
machinery in :mod:`matt.pathgen`; :class:`FmModel` is the one shipped here.
Row 0 of every field's parameter block is the mask row and is pinned to
zero, so a masked feature contributes nothing to the score.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .core import ConfigError, Instance, InvalidInputError, MattError, as_dataset

log = logging.getLogger(__name__)

MAGIC = b"MATTFMDL"
VERSION = 1


class Scorer(Protocol):
    def predict(self, X: np.ndarray) -> np.ndarray: ...


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    l2: float = 1e-5
    epochs: int = 3
    batch_size: int = 512
    seed: int = 0
    d: int = 8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0 or self.d < 1 or self.l2 < 0:
            raise ConfigError("epochs, d and l2 must be non-negative (d >= 1)")


class FmModel:
    def __init__(self, vocab_sizes, d: int = 8, bias: float = 0.0, linear=None, embeddings=None):
        self.vocab_sizes = np.asarray(vocab_sizes, dtype=np.int64)
        if (self.vocab_sizes < 1).any():
            raise ConfigError("every field needs at least the mask row")
        self.d = int(d)
        self.offsets = np.concatenate([[0], np.cumsum(self.vocab_sizes)[:-1]]).astype(np.int64)
        n_rows = int(self.vocab_sizes.sum())
        self.bias = float(bias)
        self.linear = np.zeros(n_rows) if linear is None else np.asarray(linear, dtype=np.float64).copy()
        self.embeddings = (np.zeros((n_rows, self.d)) if embeddings is None
                           else np.asarray(embeddings, dtype=np.float64).reshape(n_rows, self.d).copy())
        self.unknown_count = 0
        self.pin_mask_rows()

    @property
    def n_fields(self) -> int:
        return len(self.vocab_sizes)

    def pin_mask_rows(self) -> None:
        self.linear[self.offsets] = 0.0
        self.embeddings[self.offsets] = 0.0

    def rows(self, X: np.ndarray) -> np.ndarray:
        """Global parameter rows for value ids; unknown ids fall back to the mask row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        if X.shape[1] != self.n_fields:
            raise InvalidInputError(f"expected {self.n_fields} fields, got {X.shape[1]}")
        unknown = (X >= self.vocab_sizes) | (X < 0)
        n_unknown = int(unknown.sum())
        if n_unknown:
            self.unknown_count += n_unknown
            log.debug("%d unknown feature ids scored as masked", n_unknown)
            X = np.where(unknown, 0, X)
        return X + self.offsets

    def logits(self, X: np.ndarray) -> np.ndarray:
        return _forward(self, self.rows(X))[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return expit(self.logits(X))

    def copy(self) -> "FmModel":
        return FmModel(self.vocab_sizes, self.d, self.bias, self.linear, self.embeddings)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_bytes(self) -> bytes:
        head = struct.pack("<8sII", MAGIC, VERSION, self.n_fields)
        return b"".join([
            head,
            self.vocab_sizes.astype("<u8").tobytes(),
            struct.pack("<Id", self.d, self.bias),
            self.linear.astype("<f8").tobytes(),
            self.embeddings.astype("<f8").tobytes(),
        ])

    @classmethod
    def load(cls, path) -> "FmModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, data: bytes) -> "FmModel":
        try:
            magic, version, n_fields = struct.unpack_from("<8sII", data, 0)
            if magic != MAGIC:
                raise MattError("not a model snapshot")
            if version != VERSION:
                raise MattError(f"unsupported model snapshot version {version}")
            off = 16
            vocab = np.frombuffer(data, dtype="<u8", count=n_fields, offset=off).astype(np.int64)
            off += 8 * n_fields
            d, bias = struct.unpack_from("<Id", data, off)
            off += 12
            rows = int(vocab.sum())
            linear = np.frombuffer(data, dtype="<f8", count=rows, offset=off)
            off += 8 * rows
            emb = np.frombuffer(data, dtype="<f8", count=rows * d, offset=off)
            off += 8 * rows * d
        except (struct.error, ValueError) as exc:
            raise MattError(f"corrupt model snapshot: {exc}") from exc
        if off != len(data):
            raise MattError("trailing bytes after model snapshot")
        return cls(vocab, d, bias, linear, emb)


def _forward(model: FmModel, rows: np.ndarray):
    """Logits plus the per-row embedding sums needed for gradients.

    Fields and embedding dimensions are accumulated one at a time so the
    result for a row never depends on what else is in the batch.
    """
    n, N = rows.shape
    lin = np.full(n, model.bias)
    s = np.zeros((n, model.d))
    sq = np.zeros((n, model.d))
    for f in range(N):
        lin += model.linear[rows[:, f]]
        v = model.embeddings[rows[:, f]]
        s += v
        sq += v * v
    pair = np.zeros(n)
    for k in range(model.d):
        pair += s[:, k] * s[:, k] - sq[:, k]
    return lin + 0.5 * pair, s


def fm_score(model: FmModel, instance: Instance) -> float:
    return float(model.predict(instance.values()[None, :])[0])


def fm_score_features(model: FmModel, features) -> float:
    """Score an explicit feature list with the direct O(n^2) pairwise sum."""
    rows = [int(model.offsets[f]) + int(v) for f, v in features if 0 < v < model.vocab_sizes[f]]
    z = model.bias + sum(model.linear[r] for r in rows)
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            z += float(model.embeddings[rows[i]] @ model.embeddings[rows[j]])
    return float(expit(z))


def loss_and_grad(model: FmModel, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean binary cross-entropy plus ``l2 * (|linear|^2 + |embeddings|^2)``.

    Returns ``(loss, grad_bias, grad_linear, grad_embeddings)``; gradients of
    the pinned mask rows are zero.
    """
    rows = model.rows(X)
    y = np.asarray(y, dtype=np.float64)
    n, N = rows.shape
    z, s = _forward(model, rows)
    data_loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    loss = data_loss + l2 * (float(model.linear @ model.linear) + float(np.sum(model.embeddings ** 2)))
    g = (expit(z) - y) / n
    n_rows = len(model.linear)
    flat = rows.reshape(-1)
    grad_b = float(g.sum())
    grad_w = np.bincount(flat, weights=np.repeat(g, N), minlength=n_rows) + 2 * l2 * model.linear
    grad_v = 2 * l2 * model.embeddings
    contrib = np.empty((n, N, model.d))
    for f in range(N):
        contrib[:, f] = g[:, None] * (s - model.embeddings[rows[:, f]])
    for k in range(model.d):
        grad_v[:, k] += np.bincount(flat, weights=contrib[:, :, k].reshape(-1), minlength=n_rows)
    grad_w[model.offsets] = 0.0
    grad_v[model.offsets] = 0.0
    return loss, grad_b, grad_w, grad_v


def init_model(vocab_sizes, d: int, rng: np.random.Generator) -> FmModel:
    """Xavier-uniform embeddings per field, zero linear weights and bias."""
    model = FmModel(vocab_sizes, d)
    for f, (off, size) in enumerate(zip(model.offsets, model.vocab_sizes)):
        limit = np.sqrt(6.0 / (size + d))
        model.embeddings[off:off + size] = rng.uniform(-limit, limit, size=(size, d))
    model.pin_mask_rows()
    return model


def train(dataset, config: TrainConfig | None = None, vocab_sizes=None) -> FmModel:
    """Fit an FM with Adam on shuffled mini-batches; deterministic under ``config.seed``."""
    config = config or TrainConfig()
    data = as_dataset(dataset)
    if len(data) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    if len(np.unique(data.y)) < 2:
        warnings.warn("training set contains a single class", RuntimeWarning, stacklevel=2)
    if vocab_sizes is None:
        vocab_sizes = data.X.max(axis=0) + 1
    rng = np.random.default_rng(config.seed)
    model = init_model(vocab_sizes, config.d, rng)
    params = [np.array([model.bias]), model.linear, model.embeddings]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            model.bias = float(params[0][0])
            Xb = data.X[idx]
            loss, gb, gw, gv = loss_and_grad(model, Xb, data.y[idx], config.l2)
            total += loss * len(idx)
            step += 1
            lr_t = config.learning_rate * np.sqrt(1 - b2 ** step) / (1 - b1 ** step)
            for p, g, a, b in zip(params, (np.array([gb]), gw, gv), m1, m2):
                a *= b1
                a += (1 - b1) * g
                b *= b2
                b += (1 - b2) * g * g
                p -= lr_t * a / (np.sqrt(b) + eps)
            model.pin_mask_rows()
        model.bias = float(params[0][0])
        log.info("epoch %d: train loss %.5f", epoch + 1, total / n)
    model.bias = float(params[0][0])
    return model


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative (ties = 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("AUC is undefined with a single class")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def logloss(scores, labels, eps: float = 1e-7) -> float:
    p = np.clip(np.asarray(scores, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
