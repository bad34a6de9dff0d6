from __future__ import annotations

import numpy as np
import pytest

from dpexplore.division import (
    SetDivision,
    ValueDivision,
    count_cells,
    finest_division,
    merged_division,
    validate_division,
)
from dpexplore.errors import DuplicateAttribute, InvalidDivision, UnknownAttribute
from dpexplore.schema import make_dataset


class TestFinestDivision:
    def test_two_numericals_give_128_cells(self, clients_schema):
        division = finest_division(["claim_amount", "cltv"], clients_schema)
        assert division.n_cells == 8 * 16 == 128

    def test_two_categoricals_give_21_cells(self, household_schema):
        division = finest_division(["hepatitis_B", "family_c"], household_schema)
        assert division.n_cells == 3 * 7 == 21

    def test_single_categorical_gives_singletons(self, clients_schema):
        division = finest_division(["policy"], clients_schema)
        assert division.shape == (3,)
        assert division.divisions[0].groups == (("A",), ("B",), ("C",))

    def test_unknown_attribute(self, clients_schema):
        with pytest.raises(UnknownAttribute):
            finest_division(["nope"], clients_schema)

    def test_duplicate_attribute(self, clients_schema):
        with pytest.raises(DuplicateAttribute):
            finest_division(["policy", "policy"], clients_schema)

    def test_finest_always_validates(self, clients_schema, household_schema):
        for schema in (clients_schema, household_schema):
            for attr in schema.names():
                validate_division(finest_division([attr], schema), schema)
        validate_division(
            finest_division(["claim_amount", "policy", "cltv"], clients_schema),
            clients_schema,
        )


class TestValidateDivision:
    def test_aligned_merge_is_ok(self, clients_schema):
        division = SetDivision(
            (ValueDivision("claim_amount", intervals=((0.0, 10000.0), (10000.0, 40000.0))),)
        )
        validate_division(division, clients_schema)

    def test_off_lattice_boundary_rejected(self, clients_schema):
        division = SetDivision(
            (ValueDivision("claim_amount", intervals=((0.0, 7000.0), (7000.0, 40000.0))),)
        )
        with pytest.raises(InvalidDivision, match="lattice"):
            validate_division(division, clients_schema)

    def test_uncovered_category_rejected(self, clients_schema):
        division = SetDivision((ValueDivision("policy", groups=(("A",), ("B",))),))
        with pytest.raises(InvalidDivision, match="not covered"):
            validate_division(division, clients_schema)

    def test_gap_between_intervals_rejected(self, clients_schema):
        division = SetDivision(
            (ValueDivision("claim_amount", intervals=((0.0, 10000.0), (15000.0, 40000.0))),)
        )
        with pytest.raises(InvalidDivision):
            validate_division(division, clients_schema)

    def test_duplicate_category_rejected(self, clients_schema):
        division = SetDivision(
            (ValueDivision("policy", groups=(("A", "B"), ("B", "C"))),)
        )
        with pytest.raises(InvalidDivision):
            validate_division(division, clients_schema)


class TestCountCells:
    def test_empty_dataset_all_zero(self, tiny_schema):
        empty = make_dataset(
            tiny_schema,
            {"x": np.zeros(0), "policy": np.zeros(0, dtype=np.int64)},
            0,
        )
        counts = count_cells(empty, finest_division(["x", "policy"], tiny_schema))
        assert set(counts.values()) == {0}

    def test_one_record_per_finest_bin(self, tiny_dataset, tiny_schema):
        counts = count_cells(tiny_dataset, finest_division(["x"], tiny_schema))
        assert [counts[(i,)] for i in range(4)] == [1, 1, 1, 1]

    def test_merged_counts_aggregate_finest(self, tiny_dataset, tiny_schema):
        division = SetDivision((merged_division(tiny_schema.get("x"), [2]),))
        counts = count_cells(tiny_dataset, division)
        assert [counts[(0,)], counts[(1,)]] == [2, 2]

    def test_counts_sum_to_n_on_random_data(self, tiny_schema):
        rng = np.random.default_rng(5)
        n = 500
        ds = make_dataset(
            tiny_schema,
            {
                "x": rng.uniform(0, 20, n),
                "policy": rng.integers(0, 3, n).astype(np.int64),
            },
            n,
        )
        for attrs in (["x"], ["policy"], ["x", "policy"]):
            counts = count_cells(ds, finest_division(attrs, tiny_schema))
            assert sum(counts.values()) == n

    def test_aggregation_consistency_bruteforce(self, tiny_schema):
        rng = np.random.default_rng(17)
        n = 200
        ds = make_dataset(
            tiny_schema,
            {
                "x": rng.uniform(0, 20, n),
                "policy": rng.integers(0, 3, n).astype(np.int64),
            },
            n,
        )
        finest = count_cells(ds, finest_division(["x"], tiny_schema))
        merged = count_cells(ds, SetDivision((merged_division(tiny_schema.get("x"), [1, 2]),)))
        assert merged[(0,)] == finest[(0,)]
        assert merged[(1,)] == finest[(1,)]
        assert merged[(2,)] == finest[(2,)] + finest[(3,)]
