"""Feature-space vocabulary shared by every other module.

A feature is a ``(field, value)`` pair where ``value`` is a dense id and
id 0 means "masked / absent".  A feature combination is canonicalized into a
:class:`ComboKey` whose members are sorted by field, so equal combinations
always produce equal keys (and equal hashes, see :mod:`matt._hashing`).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

MASK = 0


class MattError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(MattError, ValueError):
    pass


class InvalidInputError(MattError, ValueError):
    pass


class ConfigError(MattError, ValueError):
    pass


class FeatureValue(NamedTuple):
    field: int
    value: int


@dataclass(frozen=True)
class Instance:
    """One labeled sample: exactly one value per field, in field order."""

    features: tuple[FeatureValue, ...]
    label: int = 0

    def __post_init__(self):
        for i, f in enumerate(self.features):
            if f.field != i:
                raise SchemaError(f"feature {i} has field {f.field}; expected one value per field in order")
        if self.label not in (0, 1):
            raise InvalidInputError(f"label must be 0 or 1, got {self.label!r}")

    @classmethod
    def from_values(cls, values: Sequence[int], label: int = 0) -> "Instance":
        return cls(tuple(FeatureValue(i, int(v)) for i, v in enumerate(values)), int(label))

    @property
    def n_fields(self) -> int:
        return len(self.features)

    def active(self) -> tuple[FeatureValue, ...]:
        """Non-masked features in field order."""
        return tuple(f for f in self.features if f.value != MASK)

    def values(self) -> np.ndarray:
        return np.array([f.value for f in self.features], dtype=np.int64)


@dataclass(frozen=True, order=True)
class ComboKey:
    members: tuple[FeatureValue, ...]

    @property
    def order(self) -> int:
        return len(self.members)

    def row(self) -> list[int]:
        """Flat ``[f1, v1, f2, v2, ...]`` form used by the vectorized sketch paths."""
        out: list[int] = []
        for f, v in self.members:
            out.extend((f, v))
        return out

    def serialize(self) -> bytes:
        """Length-prefixed little-endian ``(field, value)`` 32-bit pairs."""
        arr = np.array([self.order] + self.row(), dtype="<u4")
        return arr.tobytes()

    @classmethod
    def deserialize(cls, data: bytes) -> "ComboKey":
        arr = np.frombuffer(data, dtype="<u4")
        m = int(arr[0])
        if len(arr) != 1 + 2 * m:
            raise InvalidInputError("truncated combo key")
        return cls(tuple(FeatureValue(int(arr[1 + 2 * i]), int(arr[2 + 2 * i])) for i in range(m)))

    def __repr__(self) -> str:
        inner = ", ".join(f"(f{f},{v})" for f, v in self.members)
        return f"ComboKey[{inner}]"


def canonical_combo(values: Iterable[FeatureValue | tuple[int, int]]) -> ComboKey:
    members = sorted(FeatureValue(int(f), int(v)) for f, v in values)
    if not members:
        raise InvalidInputError("a combination needs at least one feature")
    for a, b in zip(members, members[1:]):
        if a.field == b.field:
            raise SchemaError(f"duplicate field {a.field} in combination")
    if any(m.value == MASK for m in members):
        raise InvalidInputError("masked features cannot form a combination")
    return ComboKey(tuple(members))


def enumerate_combos(instance: Instance, max_order: int) -> Iterator[ComboKey]:
    """All combos of order ``1..max_order`` over the instance's non-masked features.

    Yields order 1 first, then order 2, ...; within an order, lexicographic by
    field index.  This is also the event order used when building a sketch.
    """
    if max_order < 1:
        raise ConfigError("max_order must be >= 1")
    active = instance.active()
    for m in range(1, max_order + 1):
        for members in combinations(active, m):
            yield ComboKey(members)


class Dataset:
    """Array-backed sequence of :class:`Instance`.

    ``X`` holds value ids with shape ``(n, n_fields)`` (0 = masked), ``y`` the
    binary labels.  Indexing yields :class:`Instance` objects; bulk code works
    on the arrays directly.
    """

    def __init__(self, X, y=None):
        X = np.ascontiguousarray(X, dtype=np.int64)
        if X.ndim != 2:
            raise SchemaError("X must be 2-dimensional (instances x fields)")
        if (X < 0).any():
            raise SchemaError("value ids must be non-negative")
        y = np.zeros(len(X), dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64)
        if y.shape != (len(X),):
            raise SchemaError("y must have one label per instance")
        if not np.isin(y, (0, 1)).all():
            raise InvalidInputError("labels must be 0 or 1")
        self.X = X
        self.y = y

    @classmethod
    def from_instances(cls, instances: Iterable[Instance]) -> "Dataset":
        instances = list(instances)
        if not instances:
            return cls(np.zeros((0, 0), dtype=np.int64))
        n_fields = instances[0].n_fields
        if any(inst.n_fields != n_fields for inst in instances):
            raise SchemaError("instances disagree on the number of fields")
        X = np.array([[f.value for f in inst.features] for inst in instances], dtype=np.int64)
        return cls(X.reshape(len(instances), n_fields), [inst.label for inst in instances])

    @property
    def n_fields(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, i: int) -> Instance:
        return Instance.from_values(self.X[i], self.y[i])

    def __iter__(self) -> Iterator[Instance]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


def as_dataset(data) -> Dataset:
    if isinstance(data, Dataset):
        return data
    return Dataset.from_instances(data)
