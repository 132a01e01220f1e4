"""Immutable relational tables with primary keys, canonical serialization, and digests.

Tables are value objects: every operation returns a new table and never mutates
its input. A cell is either a text string or None (null). Rows are stored in
canonical order (sorted by their primary-key cells), so two tables holding the
same rows compare equal regardless of insertion order, serialize to identical
bytes, and share one SHA-256 digest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

Value = Optional[str]  # a cell: text, or None for null
Row = dict[str, Value]

ZERO_DIGEST = "0" * 64


def canonical_json(obj: object) -> bytes:
    """Compact UTF-8 JSON with sorted keys; stable across runs and platforms."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class RelationalError(Exception):
    """Base class for table errors."""


class SchemaMismatch(RelationalError):
    """A row, key binding, or change set does not fit the table's schema."""


class KeyConflict(RelationalError):
    """Two rows would share the same primary-key cells."""


class NotFound(RelationalError):
    """No row matches the given key."""


class KeyImmutable(RelationalError):
    """An update tried to change a primary-key attribute."""


class UnknownAttribute(RelationalError):
    """An attribute name is not part of the schema."""


@dataclass(frozen=True)
class Schema:
    """Ordered attribute names plus a primary key (non-empty subset of attrs)."""

    attrs: tuple[str, ...]
    key: tuple[str, ...]

    def __post_init__(self) -> None:
        attrs = tuple(self.attrs)
        key = tuple(self.key)
        object.__setattr__(self, "attrs", attrs)
        object.__setattr__(self, "key", key)
        if not attrs:
            raise SchemaMismatch("schema needs at least one attribute")
        for a in attrs:
            if not isinstance(a, str) or not a:
                raise SchemaMismatch(f"bad attribute name: {a!r}")
        if len(set(attrs)) != len(attrs):
            raise SchemaMismatch(f"duplicate attribute names in {attrs}")
        if not key:
            raise SchemaMismatch("primary key must not be empty")
        if len(set(key)) != len(key):
            raise SchemaMismatch(f"duplicate key attributes in {key}")
        missing = [k for k in key if k not in attrs]
        if missing:
            raise UnknownAttribute(f"key attributes not in schema: {missing}")

    def to_json_dict(self) -> dict:
        return {"attrs": list(self.attrs), "key": list(self.key)}

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "Schema":
        return cls(tuple(d["attrs"]), tuple(d["key"]))


def _normalize_row(schema: Schema, row: Mapping[str, Value]) -> Row:
    """Validate a row against the schema and order its cells by schema attrs."""
    given = set(row)
    declared = set(schema.attrs)
    if given != declared:
        extra = sorted(given - declared)
        missing = sorted(declared - given)
        raise SchemaMismatch(f"row cells do not match schema (extra={extra}, missing={missing})")
    for a in schema.attrs:
        v = row[a]
        if v is not None and not isinstance(v, str):
            raise SchemaMismatch(f"cell {a!r} must be a string or null, got {type(v).__name__}")
    for k in schema.key:
        if row[k] is None:
            raise SchemaMismatch(f"primary-key cell {k!r} must not be null")
    return {a: row[a] for a in schema.attrs}


@dataclass(frozen=True)
class Table:
    """An immutable table: id, schema, and rows unique on the primary key.

    Row dicts are owned by the table after construction; callers must not
    mutate them. All editing goes through the operations below, each of which
    returns a new table.
    """

    id: str
    schema: Schema
    rows: tuple[Row, ...] = ()

    def __post_init__(self) -> None:
        normalized = [_normalize_row(self.schema, r) for r in self.rows]
        normalized.sort(key=self._row_key)
        by_key: dict[tuple[str, ...], Row] = {}
        for row in normalized:
            k = self._row_key(row)
            if k in by_key:
                raise KeyConflict(f"duplicate primary key {k} in table {self.id!r}")
            by_key[k] = row
        object.__setattr__(self, "rows", tuple(normalized))
        object.__setattr__(self, "_by_key", by_key)

    def _row_key(self, row: Mapping[str, Value]) -> tuple[str, ...]:
        return tuple(row[k] for k in self.schema.key)  # type: ignore[return-value]

    def _bind_key(self, key: Mapping[str, Value]) -> tuple[str, ...]:
        if set(key) != set(self.schema.key):
            raise SchemaMismatch(
                f"key must bind exactly the primary-key attributes {self.schema.key}, got {sorted(key)}"
            )
        return tuple(key[k] for k in self.schema.key)  # type: ignore[return-value]

    def get_row(self, key: Mapping[str, Value]) -> Optional[Row]:
        """The row matching the key, or None. The result must not be mutated."""
        return self._by_key.get(self._bind_key(key))  # type: ignore[attr-defined]

    def insert_row(self, row: Mapping[str, Value]) -> "Table":
        """Add one row; the key cells must be fresh."""
        normalized = _normalize_row(self.schema, row)
        k = self._row_key(normalized)
        if k in self._by_key:  # type: ignore[attr-defined]
            raise KeyConflict(f"row with key {k} already in table {self.id!r}")
        return Table(self.id, self.schema, self.rows + (normalized,))

    def update_row(self, key: Mapping[str, Value], changes: Mapping[str, Value]) -> "Table":
        """Overwrite cells of the row matching `key`; key attributes are immutable."""
        k = self._bind_key(key)
        for a, v in changes.items():
            if a not in self.schema.attrs:
                raise SchemaMismatch(f"changed attribute {a!r} not in schema")
            if a in self.schema.key:
                raise KeyImmutable(f"cannot change primary-key attribute {a!r}")
            if v is not None and not isinstance(v, str):
                raise SchemaMismatch(f"cell {a!r} must be a string or null")
        old = self._by_key.get(k)  # type: ignore[attr-defined]
        if old is None:
            raise NotFound(f"no row with key {k} in table {self.id!r}")
        if not changes:
            return self
        new_row = {**old, **changes}
        return Table(self.id, self.schema, tuple(new_row if r is old else r for r in self.rows))

    def delete_row(self, key: Mapping[str, Value]) -> "Table":
        """Remove the row matching `key`."""
        k = self._bind_key(key)
        old = self._by_key.get(k)  # type: ignore[attr-defined]
        if old is None:
            raise NotFound(f"no row with key {k} in table {self.id!r}")
        return Table(self.id, self.schema, tuple(r for r in self.rows if r is not old))

    def project(self, attrs: Sequence[str]) -> frozenset[tuple[Value, ...]]:
        """Project onto `attrs` with set semantics: duplicate rows collapse."""
        unknown = [a for a in attrs if a not in self.schema.attrs]
        if unknown:
            raise UnknownAttribute(f"cannot project on unknown attributes {unknown}")
        return frozenset(tuple(r[a] for a in attrs) for r in self.rows)

    def check_fd(self, determinant: Iterable[str], dependent: Iterable[str]) -> bool:
        """True iff no two rows agree on `determinant` yet differ on `dependent`."""
        det = tuple(sorted(set(determinant)))
        dep = tuple(sorted(set(dependent)))
        unknown = [a for a in det + dep if a not in self.schema.attrs]
        if unknown:
            raise UnknownAttribute(f"unknown attributes in dependency check: {unknown}")
        seen: dict[tuple[Value, ...], tuple[Value, ...]] = {}
        for r in self.rows:
            d = tuple(r[a] for a in det)
            v = tuple(r[a] for a in dep)
            if seen.setdefault(d, v) != v:
                return False
        return True

    def with_id(self, new_id: str) -> "Table":
        """The same table value under a different id."""
        return Table(new_id, self.schema, self.rows)

    def to_json_dict(self) -> dict:
        """The persistence form: rows as value arrays in schema order, canonical row order."""
        return {
            "id": self.id,
            "schema": self.schema.to_json_dict(),
            "rows": [[r[a] for a in self.schema.attrs] for r in self.rows],
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "Table":
        schema = Schema.from_json_dict(d["schema"])
        rows = [dict(zip(schema.attrs, cells)) for cells in d["rows"]]
        return cls(d["id"], schema, tuple(rows))

    def canonical_bytes(self) -> bytes:
        """Deterministic serialization; equal tables yield identical bytes."""
        return canonical_json(self.to_json_dict())

    def digest(self) -> str:
        """SHA-256 over the canonical bytes; equal digests iff equal tables."""
        return sha256_hex(self.canonical_bytes())
