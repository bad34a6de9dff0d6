"""Grid set divisions: the unit of batch count requests.

A set division is a grid partition of the joint attribute space. Numerical
attributes are split into contiguous intervals whose endpoints sit on the
min_interval lattice; categorical attributes are split into groups of
categories. Cells (one interval/group per attribute, Cartesian product)
are pairwise disjoint and cover the whole domain, so one budget charge
pays for counts over all cells at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidDivision
from .schema import AttributeSchema, Dataset, Schema

_LATTICE_TOL = 1e-9

# A cell is the tuple of per-attribute interval/group indices, in the order
# of the division's attributes.
Cell = tuple[int, ...]


@dataclass(frozen=True)
class ValueDivision:
    """Partition of one attribute's domain.

    Exactly one of ``intervals`` (numerical, list of [lo, hi) pairs with the
    final one closed) or ``groups`` (categorical, lists of category labels)
    is set.
    """

    attribute: str
    intervals: tuple[tuple[float, float], ...] | None = None
    groups: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        if (self.intervals is None) == (self.groups is None):
            raise InvalidDivision(
                f"{self.attribute}: exactly one of intervals/groups must be given"
            )

    @property
    def size(self) -> int:
        return len(self.intervals) if self.intervals is not None else len(self.groups)  # type: ignore[arg-type]

    def to_dict(self) -> dict:
        if self.intervals is not None:
            return {"attribute": self.attribute, "intervals": [list(iv) for iv in self.intervals]}
        return {"attribute": self.attribute, "groups": [list(g) for g in self.groups]}  # type: ignore[union-attr]

    @classmethod
    def from_dict(cls, d: dict) -> "ValueDivision":
        if "intervals" in d and d["intervals"] is not None:
            return cls(
                attribute=d["attribute"],
                intervals=tuple((float(a), float(b)) for a, b in d["intervals"]),
            )
        if "groups" in d and d["groups"] is not None:
            return cls(
                attribute=d["attribute"],
                groups=tuple(tuple(str(c) for c in g) for g in d["groups"]),
            )
        raise InvalidDivision(f"{d.get('attribute')}: neither intervals nor groups given")


@dataclass(frozen=True)
class SetDivision:
    """Grid partition over one or more distinct attributes."""

    divisions: tuple[ValueDivision, ...]

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(d.attribute for d in self.divisions)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(d.size for d in self.divisions)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape)) if self.divisions else 0

    def cells(self) -> list[Cell]:
        """All cell index vectors, row-major."""
        return [tuple(idx) for idx in np.ndindex(*self.shape)]

    def division_for(self, attribute: str) -> ValueDivision:
        for d in self.divisions:
            if d.attribute == attribute:
                return d
        raise InvalidDivision(f"attribute {attribute!r} not in division")

    def restricted_to(self, attributes: Sequence[str]) -> "SetDivision":
        """Sub-grid over a subset of this division's attributes."""
        return SetDivision(tuple(self.division_for(a) for a in attributes))

    def to_dict(self) -> dict:
        return {"divisions": [d.to_dict() for d in self.divisions]}

    @classmethod
    def from_dict(cls, d: dict) -> "SetDivision":
        return cls(tuple(ValueDivision.from_dict(v) for v in d["divisions"]))


def _lattice_index(attr: AttributeSchema, value: float, what: str) -> int:
    """Index of a value on the attribute's min_interval lattice, or raise."""
    lo, _ = attr.range  # type: ignore[misc]
    step = attr.min_interval
    k = (value - lo) / step  # type: ignore[operator]
    if abs(k - round(k)) > _LATTICE_TOL * max(1.0, abs(k)):
        raise InvalidDivision(
            f"{attr.name}: {what} {value} is not on the {step}-interval lattice"
        )
    return round(k)


def finest_division(attributes: Sequence[str], schema: Schema) -> SetDivision:
    """Finest grid allowed by the schema: every lattice point splits, every
    category is its own group."""
    divisions = []
    for attr in schema.require(attributes):
        if attr.kind == "numerical":
            lo, _ = attr.range  # type: ignore[misc]
            step = attr.min_interval
            edges = [lo + i * step for i in range(attr.n_bins + 1)]  # type: ignore[operator]
            divisions.append(
                ValueDivision(
                    attribute=attr.name,
                    intervals=tuple((edges[i], edges[i + 1]) for i in range(attr.n_bins)),
                )
            )
        else:
            divisions.append(
                ValueDivision(
                    attribute=attr.name,
                    groups=tuple((c,) for c in attr.categories),  # type: ignore[union-attr]
                )
            )
    return SetDivision(tuple(divisions))


def merged_division(attr: AttributeSchema, boundaries: Sequence[int]) -> ValueDivision:
    """Numerical division from finest-bin boundary indices.

    ``boundaries`` are the interior split points in finest-bin units, e.g.
    [2, 5] on an 8-bin attribute gives bins [0,2), [2,5), [5,8).
    """
    lo, _ = attr.range  # type: ignore[misc]
    step = attr.min_interval
    edges = [0, *boundaries, attr.n_bins]
    intervals = tuple(
        (lo + edges[i] * step, lo + edges[i + 1] * step) for i in range(len(edges) - 1)  # type: ignore[operator]
    )
    return ValueDivision(attribute=attr.name, intervals=intervals)


def validate_division(division: SetDivision, schema: Schema) -> None:
    """Check disjointness, full coverage and lattice alignment.

    Raises InvalidDivision naming the first violated invariant.
    """
    if not division.divisions:
        raise InvalidDivision("division has no attributes")
    names = division.attributes
    if len(set(names)) != len(names):
        raise InvalidDivision(f"duplicate attribute in division: {list(names)}")
    for vd in division.divisions:
        attr = schema.get(vd.attribute)
        if attr.kind == "numerical":
            if vd.intervals is None:
                raise InvalidDivision(f"{attr.name}: numerical attribute needs intervals")
            lo, hi = attr.range  # type: ignore[misc]
            prev_end = lo
            for iv_lo, iv_hi in vd.intervals:
                if abs(iv_lo - prev_end) > _LATTICE_TOL * max(1.0, abs(hi)):
                    raise InvalidDivision(
                        f"{attr.name}: interval [{iv_lo}, {iv_hi}] leaves a gap or overlap "
                        f"at {prev_end}"
                    )
                if not iv_hi > iv_lo:
                    raise InvalidDivision(f"{attr.name}: empty interval [{iv_lo}, {iv_hi}]")
                _lattice_index(attr, iv_lo, "interval start")
                _lattice_index(attr, iv_hi, "interval end")
                prev_end = iv_hi
            if abs(prev_end - hi) > _LATTICE_TOL * max(1.0, abs(hi)):
                raise InvalidDivision(f"{attr.name}: intervals do not cover up to {hi}")
        else:
            if vd.groups is None:
                raise InvalidDivision(f"{attr.name}: categorical attribute needs groups")
            seen: list[str] = []
            for group in vd.groups:
                if not group:
                    raise InvalidDivision(f"{attr.name}: empty category group")
                for c in group:
                    if c not in attr.categories:  # type: ignore[operator]
                        raise InvalidDivision(f"{attr.name}: unknown category {c!r}")
                    if c in seen:
                        raise InvalidDivision(f"{attr.name}: category {c!r} in two groups")
                    seen.append(c)
            uncovered = [c for c in attr.categories if c not in seen]  # type: ignore[union-attr]
            if uncovered:
                raise InvalidDivision(f"{attr.name}: categories not covered: {uncovered}")


def finest_to_division_map(vd: ValueDivision, attr: AttributeSchema) -> np.ndarray:
    """For each finest bin of the attribute, the index of the division cell
    containing it. Assumes the division is valid."""
    if vd.intervals is not None:
        starts = np.array([_lattice_index(attr, iv[0], "interval start") for iv in vd.intervals])
        finest = np.arange(attr.n_bins)
        return np.searchsorted(starts, finest, side="right") - 1
    mapping = np.empty(len(attr.categories), dtype=np.int64)  # type: ignore[arg-type]
    for gi, group in enumerate(vd.groups):  # type: ignore[union-attr]
        for c in group:
            mapping[attr.categories.index(c)] = gi  # type: ignore[union-attr]
    return mapping


def count_cells(dataset: Dataset, division: SetDivision) -> dict[Cell, int]:
    """Exact per-cell record counts (curator only; must never cross the
    trust boundary un-noised). The counts over all cells sum to N."""
    validate_division(division, dataset.schema)
    counts = count_array(dataset, division)
    return {tuple(idx): int(counts[idx]) for idx in np.ndindex(*division.shape)}


def count_array(dataset: Dataset, division: SetDivision) -> np.ndarray:
    """Exact counts as an ndarray shaped like the division grid."""
    shape = division.shape
    if dataset.n_records == 0:
        return np.zeros(shape, dtype=np.int64)
    multi = []
    for vd in division.divisions:
        attr = dataset.schema.get(vd.attribute)
        codes = dataset.finest_codes(vd.attribute)
        multi.append(finest_to_division_map(vd, attr)[codes])
    raveled = np.ravel_multi_index(multi, shape)
    counts = np.bincount(raveled, minlength=int(np.prod(shape)))
    return counts.reshape(shape)
