from __future__ import annotations

import json

import numpy as np
import pytest

from dpexplore.errors import MalformedFile, SchemaViolation
from dpexplore.schema import AttributeSchema, Schema, load_dataset, make_dataset


def write_files(tmp_path, rows, schema_entries):
    schema_file = tmp_path / "schema.json"
    schema_file.write_text(json.dumps(schema_entries))
    data_file = tmp_path / "data.csv"
    data_file.write_text("\n".join(rows) + "\n")
    return data_file, schema_file


CLAIM_ENTRY = {
    "name": "claim_amount",
    "kind": "numerical",
    "range": [0, 40000],
    "min_interval": 5000,
    "sensitive": True,
}
POLICY_ENTRY = {"name": "policy", "kind": "categorical", "categories": ["A", "B", "C"]}


class TestAttributeSchema:
    def test_numerical_needs_exact_multiple_range(self):
        with pytest.raises(SchemaViolation):
            AttributeSchema("x", "numerical", range=(0, 7), min_interval=2)

    def test_numerical_bin_count(self):
        attr = AttributeSchema("claim_amount", "numerical", range=(0, 40000), min_interval=5000)
        assert attr.n_bins == 8

    def test_boundary_value_goes_right(self):
        attr = AttributeSchema("x", "numerical", range=(0, 20), min_interval=5)
        assert attr.bin_index(5.0) == 1
        assert attr.bin_index(0.0) == 0
        # final bin is closed on both ends
        assert attr.bin_index(20.0) == 3

    def test_categorical_rejects_duplicates(self):
        with pytest.raises(SchemaViolation):
            AttributeSchema("p", "categorical", categories=("A", "A"))

    def test_kind_fields_are_exclusive(self):
        with pytest.raises(SchemaViolation):
            AttributeSchema("x", "numerical", range=(0, 10), min_interval=5, categories=("A",))
        with pytest.raises(SchemaViolation):
            AttributeSchema("p", "categorical", categories=("A",), min_interval=1, range=(0, 1))


class TestLoadDataset:
    def test_claims_table_has_eight_finest_bins(self, tmp_path):
        data, schema = write_files(
            tmp_path,
            ["claim_amount,policy", "100,A", "39999,B"],
            [CLAIM_ENTRY, POLICY_ENTRY],
        )
        ds = load_dataset(data, schema)
        assert ds.n_records == 2
        assert ds.schema.get("claim_amount").n_bins == 8

    def test_empty_table_gives_zero_records(self, tmp_path):
        data, schema = write_files(
            tmp_path, ["claim_amount,policy"], [CLAIM_ENTRY, POLICY_ENTRY]
        )
        ds = load_dataset(data, schema)
        assert ds.n_records == 0

    def test_unknown_category_is_schema_violation(self, tmp_path):
        data, schema = write_files(
            tmp_path, ["claim_amount,policy", "100,D"], [CLAIM_ENTRY, POLICY_ENTRY]
        )
        with pytest.raises(SchemaViolation):
            load_dataset(data, schema)

    def test_out_of_range_value_is_schema_violation(self, tmp_path):
        data, schema = write_files(
            tmp_path, ["claim_amount,policy", "40001,A"], [CLAIM_ENTRY, POLICY_ENTRY]
        )
        with pytest.raises(SchemaViolation):
            load_dataset(data, schema)

    def test_missing_column_is_malformed(self, tmp_path):
        data, schema = write_files(tmp_path, ["claim_amount", "100"], [CLAIM_ENTRY, POLICY_ENTRY])
        with pytest.raises(MalformedFile):
            load_dataset(data, schema)

    def test_missing_file_is_malformed(self, tmp_path):
        schema_file = tmp_path / "schema.json"
        schema_file.write_text(json.dumps([CLAIM_ENTRY]))
        with pytest.raises(MalformedFile):
            load_dataset(tmp_path / "nope.csv", schema_file)

    def test_bad_json_is_malformed(self, tmp_path):
        schema_file = tmp_path / "schema.json"
        schema_file.write_text("{not json")
        data_file = tmp_path / "data.csv"
        data_file.write_text("claim_amount\n")
        with pytest.raises(MalformedFile):
            load_dataset(data_file, schema_file)


class TestMakeDataset:
    def test_rejects_out_of_range_column(self, tiny_schema):
        with pytest.raises(SchemaViolation):
            make_dataset(
                tiny_schema,
                {"x": np.array([25.0]), "policy": np.array([0], dtype=np.int64)},
                1,
            )

    def test_records_view_decodes_categories(self, tiny_dataset):
        rows = tiny_dataset.records
        assert rows[0] == (1.0, "A")
        assert rows[1] == (6.0, "B")

    def test_schema_roundtrip(self, clients_schema):
        again = Schema.from_list(json.loads(json.dumps(clients_schema.to_list())))
        assert again.to_list() == clients_schema.to_list()
