"""Dataset ingestion, vocabularies and the synthetic skewed-data generator.

Files are tab-separated with a header row; the label column is ``label`` and
a missing value is the empty string.  Categorical tokens get dense ids in
order of first appearance in the training split (id 0 is the mask), numeric
tokens are bucketized on a log2 scale.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import MASK, ConfigError, Dataset, InvalidInputError, SchemaError

log = logging.getLogger(__name__)

LABEL = "label"
MAX_BUCKET = 64


def bucketize_numeric(x, max_bucket: int = MAX_BUCKET, warnings: Counter | None = None) -> int:
    """Missing -> 0, ``x <= 0`` -> 1, else ``2 + floor(log2(1 + x))`` capped at ``max_bucket``."""
    if x is None or (isinstance(x, str) and x.strip() == ""):
        return MASK
    try:
        value = float(x)
    except (TypeError, ValueError):
        if warnings is not None:
            warnings["unparseable_numeric"] += 1
        return MASK
    if math.isnan(value):
        return MASK
    if value <= 0:
        return 1
    if math.isinf(value):
        return max_bucket
    return min(2 + int(math.floor(math.log2(1.0 + value))), max_bucket)


@dataclass
class FieldSpec:
    name: str
    kind: str = "categorical"
    vocab: dict[str, int] = field(default_factory=dict)

    def size(self, max_bucket: int) -> int:
        return max_bucket + 1 if self.kind == "numeric" else len(self.vocab) + 1


class Schema:
    def __init__(self, fields: Sequence[FieldSpec], label: str = LABEL, max_bucket: int = MAX_BUCKET):
        names = [f.name for f in fields]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate field names")
        if label in names:
            raise SchemaError("label column cannot also be a feature")
        for f in fields:
            if f.kind not in ("categorical", "numeric"):
                raise SchemaError(f"unknown field kind {f.kind!r}")
        self.fields = list(fields)
        self.label = label
        self.max_bucket = max_bucket

    @classmethod
    def from_header(cls, header: Sequence[str], numeric: Sequence[str] = (), label: str = LABEL,
                    max_bucket: int = MAX_BUCKET) -> "Schema":
        if label not in header:
            raise SchemaError(f"header has no {label!r} column")
        numeric = set(numeric)
        unknown = numeric - set(header)
        if unknown:
            raise SchemaError(f"numeric fields not in header: {sorted(unknown)}")
        fields = [FieldSpec(h, "numeric" if h in numeric else "categorical") for h in header if h != label]
        return cls(fields, label, max_bucket)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    def vocab_sizes(self) -> list[int]:
        return [f.size(self.max_bucket) for f in self.fields]

    def encode(self, f: int, token: str, split: str, warnings: Counter) -> int:
        spec = self.fields[f]
        if spec.kind == "numeric":
            return bucketize_numeric(token, self.max_bucket, warnings)
        if token == "":
            return MASK
        got = spec.vocab.get(token)
        if got is not None:
            return got
        if split == "train":
            got = spec.vocab[token] = len(spec.vocab) + 1
            return got
        warnings["unseen_token"] += 1
        return MASK

    def to_dict(self) -> dict:
        return {"label": self.label, "max_bucket": self.max_bucket,
                "fields": [asdict(f) for f in self.fields]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls([FieldSpec(**f) for f in d["fields"]], d.get("label", LABEL), d.get("max_bucket", MAX_BUCKET))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def read_header(path) -> list[str]:
    with open(path, newline="") as fh:
        return next(csv.reader(fh, delimiter="\t"))


def load_dataset(path, schema: Schema, split: str = "train") -> Dataset:
    """Parse a TSV file into a :class:`Dataset`.

    On the train split unseen categorical tokens get new ids; on any other
    split they map to the mask.  Rows with the wrong column count are
    skipped.  Counts of every recoverable problem end up in the returned
    dataset's ``warnings`` counter.
    """
    if split not in ("train", "eval", "test"):
        raise ConfigError(f"unknown split {split!r}")
    warnings: Counter = Counter()
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        expected = set(schema.names) | {schema.label}
        if set(header) != expected or len(header) != len(expected):
            raise SchemaError(f"{path}: header does not match schema")
        pos = {name: i for i, name in enumerate(header)}
        cols = [pos[name] for name in schema.names]
        label_col = pos[schema.label]
        for lineno, tokens in enumerate(reader, start=2):
            if len(tokens) != len(header):
                warnings["malformed_row"] += 1
                log.warning("%s:%d: expected %d columns, got %d; row skipped", path, lineno, len(header), len(tokens))
                continue
            label = tokens[label_col].strip()
            if label not in ("0", "1"):
                raise InvalidInputError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            rows.append([schema.encode(f, tokens[c], split, warnings) for f, c in enumerate(cols)])
            labels.append(int(label))
    X = np.array(rows, dtype=np.int64).reshape(len(rows), schema.n_fields)
    data = Dataset(X, labels)
    data.warnings = warnings
    if warnings:
        log.info("%s: %s", path, dict(warnings))
    return data


def write_tsv(path, X: np.ndarray, y: np.ndarray, names: Sequence[str] | None = None) -> None:
    X = np.asarray(X)
    names = list(names) if names is not None else [f"f{i}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(names + [LABEL]) + "\n")
        for row, label in zip(X.tolist(), np.asarray(y).tolist()):
            fh.write("\t".join("" if v == MASK else str(v) for v in row) + f"\t{label}\n")


def encode_splits(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Apply the vocabulary rule to in-memory raw ids.

    Ids are reassigned per field in order of first appearance in ``train``;
    ids never seen in ``train`` become the mask in the other splits.  This
    matches writing the splits to TSV and loading them back.
    """
    n_fields = train.n_fields
    Xt = np.zeros_like(train.X)
    outs = [np.zeros_like(o.X) for o in others]
    for f in range(n_fields):
        col = train.X[:, f]
        present = col != MASK
        uniq, first = np.unique(col[present], return_index=True)
        by_appearance = uniq[np.argsort(first, kind="stable")]
        lookup = dict(zip(by_appearance.tolist(), range(1, len(by_appearance) + 1)))
        table = np.zeros(int(max([col.max()] + [o.X[:, f].max() for o in others])) + 1, dtype=np.int64)
        for raw, new in lookup.items():
            table[raw] = new
        Xt[:, f] = table[col]
        for o, out in zip(others, outs):
            out[:, f] = table[o.X[:, f]]
    return (Dataset(Xt, train.y),) + tuple(Dataset(out, o.y) for o, out in zip(others, outs))


# -- synthetic data -----------------------------------------------------------------

@dataclass
class SynthConfig:
    n_fields: int = 20
    cardinalities: list[int] | int = field(default_factory=lambda: [20, 200, 5000, 50000])
    zipf_s: float = 1.2
    n_train: int = 100_000
    n_test: int = 20_000
    corruption: float = 0.3
    rare_threshold: int = 3
    latent_dim: int = 4
    signal: float = 1.5
    base_rate: float | None = 0.25
    bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.cardinalities, int):
            self.cardinalities = [self.cardinalities]
        cards = list(self.cardinalities)
        self.cardinalities = [int(cards[i % len(cards)]) for i in range(self.n_fields)]
        if min(self.cardinalities) < 2:
            raise ConfigError("cardinalities must be >= 2")
        if self.zipf_s < 0:
            raise ConfigError("zipf exponent must be >= 0")
        if not 0 <= self.corruption <= 1:
            raise ConfigError("corruption rate must lie in [0, 1]")
        if self.base_rate is not None and not 0 < self.base_rate < 1:
            raise ConfigError("base_rate must lie in (0, 1)")


def zipf_values(rng: np.random.Generator, cardinality: int, s: float, size: int) -> np.ndarray:
    """Ids ``1..cardinality`` with ``P(id = r)`` proportional to ``r**-s``."""
    weights = np.arange(1, cardinality + 1, dtype=np.float64) ** -s
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), cardinality - 1) + 1


def _calibrate_bias(z: np.ndarray, target: float) -> float:
    lo, hi = -30.0, 30.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if expit(mid + z).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class SyntheticData:
    train: Dataset
    test: Dataset
    truth: dict

    def write(self, directory) -> None:
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_tsv(d / "train.tsv", self.train.X, self.train.y)
        write_tsv(d / "test.tsv", self.test.X, self.test.y)
        with open(d / "truth.json", "w") as fh:
            json.dump(self.truth, fh, sort_keys=True)


def generate_synthetic(config: SynthConfig | None = None) -> SyntheticData:
    """Zipf-distributed fields with a planted pairwise ground truth.

    Every value has a latent vector and every field a random strength ``a``;
    field pair ``(f, g)`` contributes ``W[f, g] * <u_f, u_g>`` to the logit
    with ``W = a a^T`` (upper triangle), which keeps the truth inside the
    factorization-machine hypothesis class.  After labels are drawn, training
    instances that contain a value pair seen fewer than ``rare_threshold``
    times in training get their label flipped with probability
    ``corruption``.  Test labels are never corrupted.
    """
    from .sketch import combo_events

    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    N = cfg.n_fields
    n = cfg.n_train + cfg.n_test
    X = np.empty((n, N), dtype=np.int64)
    for f, card in enumerate(cfg.cardinalities):
        X[:, f] = zipf_values(rng, card, cfg.zipf_s, n)
    latents = [rng.normal(0.0, 1.0 / np.sqrt(cfg.latent_dim), size=(card + 1, cfg.latent_dim))
               for card in cfg.cardinalities]
    strength = rng.normal(size=N)
    W = np.triu(np.outer(strength, strength), k=1)
    z = np.zeros(n)
    for f in range(N):
        uf = latents[f][X[:, f]]
        for g in range(f + 1, N):
            z += W[f, g] * np.einsum("ij,ij->i", uf, latents[g][X[:, g]])
    scale = cfg.signal / z.std() if z.std() > 0 else 0.0
    W *= scale
    z *= scale
    bias = _calibrate_bias(z, cfg.base_rate) if cfg.base_rate is not None else cfg.bias
    y = (rng.random(n) < expit(bias + z)).astype(np.int64)

    Xtr, ytr = X[: cfg.n_train], y[: cfg.n_train].copy()
    events, rows = combo_events(Xtr, 2)
    counts = np.bincount(events.reshape(-1), minlength=len(rows))
    rare = counts < cfg.rare_threshold
    has_rare = rare[events].any(axis=1)
    flip = has_rare & (rng.random(cfg.n_train) < cfg.corruption)
    ytr[flip] ^= 1

    truth = {
        "config": asdict(cfg),
        "bias": bias,
        "pairwise_weights": W.tolist(),
        "corrupted_pairs": rows[rare].tolist(),
        "n_flipped": int(flip.sum()),
        "n_with_rare_pair": int(has_rare.sum()),
    }
    return SyntheticData(Dataset(Xtr, ytr), Dataset(X[cfg.n_train:], y[cfg.n_train:]), truth)
