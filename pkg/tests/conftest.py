from __future__ import annotations

import numpy as np
import pytest

from dpexplore.demo import insurance_schema, survey_schema
from dpexplore.schema import AttributeSchema, Schema, make_dataset


@pytest.fixture
def clients_schema() -> Schema:
    return insurance_schema()


@pytest.fixture
def household_schema() -> Schema:
    return survey_schema()


@pytest.fixture
def tiny_schema() -> Schema:
    return Schema(
        [
            AttributeSchema("x", "numerical", range=(0.0, 20.0), min_interval=5.0, sensitive=True),
            AttributeSchema("policy", "categorical", categories=("A", "B", "C")),
        ]
    )


@pytest.fixture
def tiny_dataset(tiny_schema):
    return make_dataset(
        tiny_schema,
        {
            "x": np.array([1.0, 6.0, 11.0, 16.0]),
            "policy": np.array([0, 1, 2, 0], dtype=np.int64),
        },
        4,
    )
