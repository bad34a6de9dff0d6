"""Bundled demo schemas and deterministic synthetic tables.

Two desk-scale scenarios ship with the engine: an insurance client table
(two sensitive long-tail numerical attributes plus a public policy type)
and a health-survey table (a sensitive diagnosis plus public household
composition counts). Tables are synthesized on demand so the repository
carries no data files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .schema import AttributeSchema, Dataset, Schema, make_dataset

INSURANCE_RECORDS = 89_392
SURVEY_RECORDS = 7_824


def insurance_schema() -> Schema:
    return Schema(
        [
            AttributeSchema(
                "claim_amount",
                "numerical",
                range=(0.0, 40_000.0),
                min_interval=5_000.0,
                sensitive=True,
            ),
            AttributeSchema("policy", "categorical", categories=("A", "B", "C")),
            AttributeSchema(
                "cltv",
                "numerical",
                range=(0.0, 800_000.0),
                min_interval=50_000.0,
                sensitive=True,
            ),
        ]
    )


def survey_schema() -> Schema:
    return Schema(
        [
            AttributeSchema(
                "hepatitis_B", "categorical", categories=("Y", "N", "idk"), sensitive=True
            ),
            AttributeSchema(
                "family_c", "categorical", categories=("1", "2", "3", "4", "5", "6", "7+")
            ),
            AttributeSchema("children_c", "categorical", categories=("0", "1", "2", "3+")),
            AttributeSchema(
                "teenager_c", "categorical", categories=("0", "1", "2", "3", "4+")
            ),
            AttributeSchema("elder_c", "categorical", categories=("0", "1", "2", "3+")),
        ]
    )


def synth_insurance(seed: int = 11, n_records: int = INSURANCE_RECORDS) -> Dataset:
    """Long-tail claims and lifetime values, policy B skewing to small claims."""
    rng = np.random.default_rng(seed)
    schema = insurance_schema()
    claims = np.minimum(rng.exponential(6_000.0, n_records), 40_000.0)
    cltv = np.minimum(
        rng.exponential(90_000.0, n_records) + claims * 4.0 * rng.random(n_records),
        800_000.0,
    )
    policy_bias = np.where(claims < 8_000.0, 0.25, 0.0)
    u = rng.random(n_records)
    policy = np.where(u < 0.35 + policy_bias, 1, np.where(u < 0.7 + policy_bias / 2, 0, 2))
    return make_dataset(
        schema,
        {"claim_amount": claims, "policy": policy.astype(np.int64), "cltv": cltv},
        n_records,
    )


def synth_survey(seed: int = 29, n_records: int = SURVEY_RECORDS) -> Dataset:
    """Household survey where bigger households carry a lower diagnosis rate."""
    rng = np.random.default_rng(seed)
    schema = survey_schema()
    family = rng.choice(7, n_records, p=[0.17, 0.27, 0.19, 0.16, 0.10, 0.06, 0.05])
    children = np.minimum(rng.binomial(3, np.clip(0.04 + 0.05 * family, 0, 0.6)), 3)
    teenager = np.minimum(rng.binomial(4, np.clip(0.03 + 0.05 * family, 0, 0.6)), 4)
    elder = np.minimum(rng.binomial(3, np.clip(0.28 - 0.02 * family, 0.02, 1.0)), 3)
    p_sick = np.clip(0.16 - 0.022 * family, 0.01, 1.0)
    u = rng.random(n_records)
    hepatitis = np.where(u < p_sick, 0, np.where(u < p_sick + 0.05, 2, 1))
    return make_dataset(
        schema,
        {
            "hepatitis_B": hepatitis.astype(np.int64),
            "family_c": family.astype(np.int64),
            "children_c": children.astype(np.int64),
            "teenager_c": teenager.astype(np.int64),
            "elder_c": elder.astype(np.int64),
        },
        n_records,
    )


def write_store(dataset: Dataset, store_dir: str | Path, name: str) -> Path:
    """Write a dataset as a named store entry (schema sidecar + CSV table)."""
    root = Path(store_dir) / name
    root.mkdir(parents=True, exist_ok=True)
    (root / "schema.json").write_text(json.dumps(dataset.schema.to_list(), indent=2))
    with (root / "data.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        names = dataset.schema.names()
        writer.writerow(names)
        cols = []
        for attr in dataset.schema:
            col = dataset.columns[attr.name]
            if attr.kind == "categorical":
                cols.append([attr.categories[int(c)] for c in col])  # type: ignore[index]
            else:
                cols.append([repr(float(v)) for v in col])
        for row in zip(*cols):
            writer.writerow(row)
    return root


def write_demo_store(store_dir: str | Path) -> None:
    """Materialize both demo datasets under a store directory."""
    write_store(synth_insurance(), store_dir, "insurance")
    write_store(synth_survey(), store_dir, "survey")
