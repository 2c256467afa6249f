"""Categorical feature fields, encoding, and UCI dataset ingestion.

A :class:`FieldSchema` fixes the order of the categorical fields and their
vocabularies. Feature vectors are plain ``int64`` arrays holding one category
index per field. Every field reserves one extra index (its cardinality) for
tokens that were never seen while the vocabulary was built.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING = "?"


class ParseError(ValueError):
    """Malformed input file; the message names the offending line."""


@dataclass(frozen=True)
class Field:
    name: str
    vocab: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.vocab)


class FieldSchema:
    """Ordered, immutable list of categorical fields."""

    def __init__(self, fields: Sequence[Field]):
        fields = tuple(fields)
        if not fields:
            raise ValueError("schema needs at least one field")
        names = [f.name for f in fields]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate field names in {names}")
        for f in fields:
            if f.cardinality < 1:
                raise ValueError(f"field {f.name!r} has an empty vocabulary")
            if len(set(f.vocab)) != len(f.vocab):
                raise ValueError(f"field {f.name!r} has duplicate categories")
        self._fields = fields
        self._index = [{tok: k for k, tok in enumerate(f.vocab)} for f in fields]
        card = np.array([f.cardinality for f in fields], dtype=np.int64)
        self._card = card
        self._card.setflags(write=False)
        # each field owns cardinality + 1 rows (the last one is the unknown slot)
        offsets = np.zeros(len(fields), dtype=np.int64)
        offsets[1:] = np.cumsum(card + 1)[:-1]
        self._offsets = offsets
        self._offsets.setflags(write=False)

    @classmethod
    def from_cardinalities(cls, names: Sequence[str], cardinalities: Sequence[int]) -> "FieldSchema":
        if len(names) != len(cardinalities):
            raise ValueError("names and cardinalities differ in length")
        fields = []
        for name, c in zip(names, cardinalities):
            if int(c) < 1:
                raise ValueError(f"cardinality of {name!r} must be >= 1, got {c}")
            fields.append(Field(name, tuple(str(k) for k in range(int(c)))))
        return cls(fields)

    @property
    def fields(self) -> tuple[Field, ...]:
        return self._fields

    @property
    def names(self) -> list[str]:
        return [f.name for f in self._fields]

    @property
    def cardinalities(self) -> np.ndarray:
        return self._card

    @property
    def offsets(self) -> np.ndarray:
        """Start row of each field in a table that stacks all fields."""
        return self._offsets

    @property
    def n_fields(self) -> int:
        return len(self._fields)

    @property
    def n_pairs(self) -> int:
        L = self.n_fields
        return L * (L - 1) // 2

    @property
    def n_rows(self) -> int:
        return int(np.sum(self._card + 1))

    def pairs(self) -> list[tuple[int, int]]:
        L = self.n_fields
        return [(i, j) for i in range(L) for j in range(i + 1, L)]

    def pair_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.pairs()
        return (np.array([i for i, _ in p], dtype=np.int64),
                np.array([j for _, j in p], dtype=np.int64))

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        if len(tokens) != self.n_fields:
            raise ValueError(f"expected {self.n_fields} tokens, got {len(tokens)}")
        out = np.empty(self.n_fields, dtype=np.int64)
        for i, tok in enumerate(tokens):
            out[i] = self._index[i].get(tok, self._card[i])
        return out

    def decode(self, x: Sequence[int]) -> list[str]:
        self.validate(x)
        return [f.vocab[k] if k < f.cardinality else "<unk>" for f, k in zip(self._fields, x)]

    def validate(self, x) -> None:
        x = np.asarray(x)
        if x.shape[-1] != self.n_fields:
            raise ValueError(f"feature vector has {x.shape[-1]} fields, schema has {self.n_fields}")
        if np.any(x < 0) or np.any(x > self._card):
            raise ValueError("category index out of range")

    def global_rows(self, X) -> np.ndarray:
        """Map per-field indices to row numbers of a field-stacked table."""
        return np.asarray(X, dtype=np.int64) + self._offsets

    def to_dict(self) -> dict:
        return {"fields": [{"name": f.name, "vocab": list(f.vocab)} for f in self._fields]}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSchema":
        return cls([Field(f["name"], tuple(f["vocab"])) for f in d["fields"]])

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, FieldSchema) and self._fields == other._fields

    def __hash__(self) -> int:
        return hash(self._fields)

    def __repr__(self) -> str:
        inner = ", ".join(f"{f.name}:{f.cardinality}" for f in self._fields)
        return f"FieldSchema({inner})"


class _VocabBuilder:
    def __init__(self, names: Sequence[str]):
        self.names = list(names)
        self.maps: list[dict[str, int]] = [{} for _ in names]

    def add(self, tokens: Sequence[str]) -> list[int]:
        idx = []
        for m, tok in zip(self.maps, tokens):
            k = m.get(tok)
            if k is None:
                k = len(m)
                m[tok] = k
            idx.append(k)
        return idx

    def schema(self) -> FieldSchema:
        return FieldSchema([Field(n, tuple(m)) for n, m in zip(self.names, self.maps)])


MUSHROOM_FIELDS = (
    "cap-shape", "cap-surface", "cap-color", "bruises", "odor", "gill-attachment",
    "gill-spacing", "gill-size", "gill-color", "stalk-shape", "stalk-root",
    "stalk-surface-above-ring", "stalk-surface-below-ring", "stalk-color-above-ring",
    "stalk-color-below-ring", "veil-type", "veil-color", "ring-number", "ring-type",
    "spore-print-color", "population", "habitat",
)

ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)
ADULT_FIELDS = (
    "workclass", "education", "marital-status", "occupation",
    "relationship", "race", "sex", "native-country",
)


def _read_lines(path) -> Iterable[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line.rstrip("\r\n")


def load_mushroom(path) -> tuple[FieldSchema, np.ndarray, np.ndarray]:
    """Read ``agaricus-lepiota.data``.

    Returns the schema, an ``(N, 22)`` index matrix and a boolean array that
    is True for edible ("safe") rows. '?' stays an ordinary category.
    """
    builder = _VocabBuilder(MUSHROOM_FIELDS)
    rows: list[list[int]] = []
    safe: list[bool] = []
    for lineno, line in _read_lines(path):
        if not line.strip():
            continue
        tokens = [t.strip() for t in line.split(",")]
        if len(tokens) != 23:
            raise ParseError(f"{path}:{lineno}: expected 23 columns, found {len(tokens)}")
        cls = tokens[0]
        if cls not in ("e", "p"):
            raise ParseError(f"{path}:{lineno}: unknown class token {cls!r}")
        safe.append(cls == "e")
        rows.append(builder.add(tokens[1:]))
    if not rows:
        raise ParseError(f"{path}: no records")
    return builder.schema(), np.array(rows, dtype=np.int64), np.array(safe, dtype=bool)


def load_adult(paths) -> tuple[FieldSchema, np.ndarray, np.ndarray]:
    """Read one or more UCI adult files (``adult.data``, ``adult.test``).

    Keeps the eight categorical attributes as features; the income bracket is
    returned separately as a boolean array (True for ">50K").
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    cols = [ADULT_COLUMNS.index(f) for f in ADULT_FIELDS]
    builder = _VocabBuilder(ADULT_FIELDS)
    rows: list[list[int]] = []
    over: list[bool] = []
    for path in paths:
        for lineno, line in _read_lines(path):
            if not line.strip() or line.lstrip().startswith("|"):
                continue
            tokens = [t.strip() for t in line.split(",")]
            if len(tokens) != 15:
                raise ParseError(f"{path}:{lineno}: expected 15 columns, found {len(tokens)}")
            label = tokens[14].rstrip(".")
            if label not in (">50K", "<=50K"):
                raise ParseError(f"{path}:{lineno}: unknown income label {tokens[14]!r}")
            over.append(label == ">50K")
            rows.append(builder.add([tokens[c] for c in cols]))
    if not rows:
        raise ParseError(f"{', '.join(map(str, paths))}: no records")
    return builder.schema(), np.array(rows, dtype=np.int64), np.array(over, dtype=bool)


def save_records(path, schema: FieldSchema, X: np.ndarray, labels: np.ndarray, name: str) -> None:
    """Write the internal record format: one ``.npz`` with schema JSON, X, labels."""
    np.savez(
        path,
        dataset=np.array(name),
        schema=np.array(json.dumps(schema.to_dict(), sort_keys=True)),
        X=np.asarray(X, dtype=np.int64),
        labels=np.asarray(labels, dtype=bool),
    )


def load_records(path) -> tuple[str, FieldSchema, np.ndarray, np.ndarray]:
    with np.load(path, allow_pickle=False) as z:
        schema = FieldSchema.from_dict(json.loads(str(z["schema"])))
        return str(z["dataset"]), schema, z["X"].copy(), z["labels"].copy()
