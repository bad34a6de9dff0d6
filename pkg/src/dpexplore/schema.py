"""Dataset schemas and raw-record storage (curator side).

A schema sidecar is authoritative: declared ranges may be wider than the
data actually observed, so ranges are never inferred from records. Values
exactly on an interior bin boundary belong to the right-hand bin and the
final bin is closed on both ends.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DuplicateAttribute,
    MalformedFile,
    SchemaViolation,
    UnknownAttribute,
)

_LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class AttributeSchema:
    """One attribute of a sensitive table.

    Numerical attributes carry a [lo, hi] range plus the minimum interval
    at which value divisions may split; categorical ones carry an ordered
    category list. ``sensitive`` marks attributes whose distribution is not
    public knowledge.
    """

    name: str
    kind: str  # "numerical" | "categorical"
    range: tuple[float, float] | None = None
    min_interval: float | None = None
    categories: tuple[str, ...] | None = None
    sensitive: bool = False

    def __post_init__(self) -> None:
        if self.kind == "numerical":
            if self.range is None or self.min_interval is None:
                raise SchemaViolation(
                    f"{self.name}: numerical attributes need range and min_interval"
                )
            if self.categories is not None:
                raise SchemaViolation(f"{self.name}: categories on a numerical attribute")
            lo, hi = self.range
            if not hi > lo:
                raise SchemaViolation(f"{self.name}: range must satisfy hi > lo")
            if self.min_interval <= 0:
                raise SchemaViolation(f"{self.name}: min_interval must be positive")
            width = (hi - lo) / self.min_interval
            if abs(width - round(width)) > _LATTICE_TOL * max(1.0, abs(width)):
                raise SchemaViolation(
                    f"{self.name}: range width is not a multiple of min_interval"
                )
        elif self.kind == "categorical":
            if not self.categories:
                raise SchemaViolation(f"{self.name}: categorical attribute needs categories")
            if self.range is not None or self.min_interval is not None:
                raise SchemaViolation(f"{self.name}: range fields on a categorical attribute")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaViolation(f"{self.name}: categories must be distinct")
        else:
            raise SchemaViolation(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def n_bins(self) -> int:
        """Number of finest cells: lattice bins or categories."""
        if self.kind == "numerical":
            lo, hi = self.range  # type: ignore[misc]
            return round((hi - lo) / self.min_interval)  # type: ignore[operator]
        return len(self.categories)  # type: ignore[arg-type]

    def bin_index(self, value: float) -> int:
        """Finest bin of a numerical value (right-closed final bin)."""
        lo, hi = self.range  # type: ignore[misc]
        if not (lo <= value <= hi):
            raise SchemaViolation(f"{self.name}: value {value} outside [{lo}, {hi}]")
        idx = int(math.floor((value - lo) / self.min_interval))  # type: ignore[operator]
        return min(idx, self.n_bins - 1)

    def category_index(self, value: str) -> int:
        try:
            return self.categories.index(value)  # type: ignore[union-attr]
        except (ValueError, AttributeError):
            raise SchemaViolation(f"{self.name}: unknown category {value!r}") from None

    def to_dict(self) -> dict:
        d: dict = {"name": self.name, "kind": self.kind, "sensitive": self.sensitive}
        if self.kind == "numerical":
            d["range"] = list(self.range)  # type: ignore[arg-type]
            d["min_interval"] = self.min_interval
        else:
            d["categories"] = list(self.categories)  # type: ignore[arg-type]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeSchema":
        try:
            kind = d["kind"]
            return cls(
                name=d["name"],
                kind=kind,
                range=tuple(d["range"]) if d.get("range") is not None else None,
                min_interval=d.get("min_interval"),
                categories=tuple(d["categories"]) if d.get("categories") is not None else None,
                sensitive=bool(d.get("sensitive", False)),
            )
        except KeyError as exc:
            raise MalformedFile(f"schema entry missing field {exc}") from None


class Schema:
    """Ordered collection of attribute schemas with name lookup."""

    def __init__(self, attributes: Sequence[AttributeSchema]):
        names = [a.name for a in attributes]
        if len(set(names)) != len(names):
            raise SchemaViolation("duplicate attribute names in schema")
        self.attributes: tuple[AttributeSchema, ...] = tuple(attributes)
        self._by_name = {a.name: a for a in attributes}

    def __iter__(self) -> Iterator[AttributeSchema]:
        return iter(self.attributes)

    def __len__(self) -> int:
        return len(self.attributes)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def get(self, name: str) -> AttributeSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownAttribute(f"unknown attribute {name!r}") from None

    def require(self, names: Sequence[str]) -> list[AttributeSchema]:
        """Resolve attribute names, insisting they exist and are distinct."""
        if len(set(names)) != len(names):
            raise DuplicateAttribute(f"attributes must be distinct: {list(names)}")
        return [self.get(n) for n in names]

    def to_list(self) -> list[dict]:
        return [a.to_dict() for a in self.attributes]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "Schema":
        return cls([AttributeSchema.from_dict(d) for d in items])


@dataclass
class Dataset:
    """Validated sensitive table, stored column-major.

    Numerical columns hold float64 values; categorical columns hold integer
    category codes. Immutable after construction; exact counts derived from
    it must never leave the curator trust zone un-noised.
    """

    schema: Schema
    columns: dict[str, np.ndarray] = field(repr=False)
    n_records: int = 0

    def __post_init__(self) -> None:
        for attr in self.schema:
            col = self.columns.get(attr.name)
            if col is None or len(col) != self.n_records:
                raise SchemaViolation(f"column {attr.name!r} missing or mis-sized")
            col.setflags(write=False)

    @property
    def records(self) -> list[tuple]:
        """Row view (category codes decoded); intended for small tables only."""
        rows = []
        for i in range(self.n_records):
            row = []
            for attr in self.schema:
                v = self.columns[attr.name][i]
                row.append(attr.categories[int(v)] if attr.kind == "categorical" else float(v))
            rows.append(tuple(row))
        return rows

    def finest_codes(self, attribute: str) -> np.ndarray:
        """Per-record finest bin index for one attribute."""
        attr = self.schema.get(attribute)
        col = self.columns[attribute]
        if attr.kind == "categorical":
            return col.astype(np.int64)
        lo, hi = attr.range  # type: ignore[misc]
        idx = np.floor((col - lo) / attr.min_interval).astype(np.int64)
        return np.minimum(idx, attr.n_bins - 1)


def make_dataset(schema: Schema, columns: dict[str, np.ndarray], n_records: int) -> Dataset:
    """Validate columns against the schema and freeze them into a Dataset."""
    for attr in schema:
        col = np.asarray(columns[attr.name])
        if attr.kind == "numerical":
            col = col.astype(np.float64)
            lo, hi = attr.range  # type: ignore[misc]
            if len(col) and (col.min() < lo or col.max() > hi):
                bad = col[(col < lo) | (col > hi)][0]
                raise SchemaViolation(f"{attr.name}: value {bad} outside [{lo}, {hi}]")
        else:
            col = col.astype(np.int64)
            if len(col) and (col.min() < 0 or col.max() >= len(attr.categories)):  # type: ignore[arg-type]
                raise SchemaViolation(f"{attr.name}: category code out of range")
        columns[attr.name] = col
    return Dataset(schema=schema, columns=columns, n_records=n_records)


def load_schema(schema_file: str | Path) -> Schema:
    """Parse a JSON schema sidecar."""
    path = Path(schema_file)
    if not path.exists():
        raise MalformedFile(f"schema file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"schema file is not valid JSON: {exc}") from None
    if isinstance(raw, dict) and "attributes" in raw:
        raw = raw["attributes"]
    if not isinstance(raw, list):
        raise MalformedFile("schema sidecar must be a list of attribute entries")
    return Schema.from_list(raw)


def load_dataset(table_file: str | Path, schema_file: str | Path) -> Dataset:
    """Load a CSV table against its schema sidecar, validating every record.

    The CSV header must contain every schema attribute (extra columns are
    ignored). Raises SchemaViolation on the first nonconforming value.
    """
    schema = load_schema(schema_file)
    path = Path(table_file)
    if not path.exists():
        raise MalformedFile(f"data table not found: {path}")

    raw_cols: dict[str, list] = {a.name: [] for a in schema}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MalformedFile("data table has no header row")
        missing = [a.name for a in schema if a.name not in reader.fieldnames]
        if missing:
            raise MalformedFile(f"data table missing columns: {missing}")
        for line_no, row in enumerate(reader, start=2):
            for attr in schema:
                text = row.get(attr.name)
                if text is None:
                    raise MalformedFile(f"line {line_no}: short row")
                if attr.kind == "numerical":
                    try:
                        value = float(text)
                    except ValueError:
                        raise SchemaViolation(
                            f"line {line_no}: {attr.name} value {text!r} is not numeric"
                        ) from None
                    lo, hi = attr.range  # type: ignore[misc]
                    if not (lo <= value <= hi):
                        raise SchemaViolation(
                            f"line {line_no}: {attr.name} value {value} outside [{lo}, {hi}]"
                        )
                    raw_cols[attr.name].append(value)
                else:
                    raw_cols[attr.name].append(attr.category_index(text))

    n = len(next(iter(raw_cols.values()))) if raw_cols else 0
    columns = {
        a.name: np.asarray(raw_cols[a.name], dtype=np.float64 if a.kind == "numerical" else np.int64)
        if raw_cols[a.name]
        else np.zeros(0, dtype=np.float64 if a.kind == "numerical" else np.int64)
        for a in schema
    }
    return Dataset(schema=schema, columns=columns, n_records=n)
