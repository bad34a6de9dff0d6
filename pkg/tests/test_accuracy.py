from __future__ import annotations

import math

import numpy as np
import pytest

from dpexplore.accuracy import (
    assess,
    ci_half_length,
    numerical_error,
    structural_error,
    summed_cells,
)
from dpexplore.curator import DataRequest
from dpexplore.division import SetDivision, finest_division, merged_division
from dpexplore.errors import TargetNotCovered
from dpexplore.schema import AttributeSchema, Schema
from dpexplore.simulate import build_model, default_marginals

from .oracles import SUM4_ABS_Q95, structural_error_bruteforce


@pytest.fixture
def quad_schema():
    return Schema([AttributeSchema("x", "numerical", range=(0.0, 4.0), min_interval=1.0)])


def pairwise_merge(schema):
    return SetDivision((merged_division(schema.get("x"), [2]),))


class TestCiHalfLength:
    def test_single_cell_at_unit_budget(self):
        assert ci_half_length(1, 1.0) == pytest.approx(math.log(20), abs=1e-12)

    def test_scale_doubles_when_budget_halves(self):
        assert ci_half_length(1, 0.5) == pytest.approx(2 * math.log(20), abs=1e-12)

    def test_scale_invariance_of_normalized_quantile(self):
        for eps in (0.1, 0.5, 1.0, 3.0):
            assert ci_half_length(1, eps) * eps == pytest.approx(math.log(20), abs=1e-12)
        for eps in (0.25, 1.0, 2.0):
            assert ci_half_length(4, eps) * eps == pytest.approx(
                ci_half_length(4, 1.0), abs=1e-12
            )

    def test_summed_quantile_matches_exact_density(self):
        # Monte Carlo under the fixed internal seed vs. the 30-digit oracle.
        value = ci_half_length(4, 1.0)
        assert 5.3 <= value <= 6.1
        assert value == pytest.approx(SUM4_ABS_Q95, abs=0.01)

    def test_summed_quantile_reproducible(self):
        assert ci_half_length(4, 1.0) == ci_half_length(4, 1.0)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            ci_half_length(0, 1.0)
        with pytest.raises(ValueError):
            ci_half_length(1, 0.0)
        with pytest.raises(ValueError):
            ci_half_length(1, 1.0, confidence=1.0)


class TestStructuralError:
    def test_finest_division_is_exact(self, quad_schema):
        division = finest_division(["x"], quad_schema)
        rng = np.random.default_rng(3)
        for _ in range(100):
            counts = rng.integers(0, 100, 4).astype(float)
            assert structural_error(counts, division, quad_schema) == 0.0

    def test_hand_oracle_pairwise_merge(self, quad_schema):
        counts = np.array([10.0, 20.0, 30.0, 40.0])
        value = structural_error(counts, pairwise_merge(quad_schema), quad_schema)
        assert value == pytest.approx(0.260416666666, abs=1e-9)
        assert value == pytest.approx(
            structural_error_bruteforce([10, 20, 30, 40], [0, 0, 1, 1]), abs=1e-12
        )

    def test_uniform_counts_survive_any_merge(self, quad_schema):
        counts = np.full(4, 25.0)
        for boundaries in ([1], [2], [3], [1, 2], [1, 3], [2, 3]):
            division = SetDivision((merged_division(quad_schema.get("x"), boundaries),))
            assert structural_error(counts, division, quad_schema) == pytest.approx(0.0)

    def test_matches_bruteforce_on_random_merges(self, quad_schema):
        rng = np.random.default_rng(8)
        for _ in range(50):
            counts = rng.integers(0, 50, 4).astype(float)
            boundaries = sorted(rng.choice([1, 2, 3], rng.integers(1, 3), replace=False))
            division = SetDivision((merged_division(quad_schema.get("x"), list(boundaries)),))
            bin_of = [0] * 4
            for i in range(4):
                bin_of[i] = sum(1 for b in boundaries if b <= i)
            assert structural_error(counts, division, quad_schema) == pytest.approx(
                structural_error_bruteforce(list(counts), bin_of), abs=1e-12
            )

    def test_refining_never_increases_error(self, quad_schema):
        rng = np.random.default_rng(21)
        counts = rng.integers(0, 80, 4).astype(float)
        coarse = SetDivision((merged_division(quad_schema.get("x"), [2]),))
        finer = SetDivision((merged_division(quad_schema.get("x"), [1, 2]),))
        finest = finest_division(["x"], quad_schema)
        e_coarse = structural_error(counts, coarse, quad_schema)
        e_finer = structural_error(counts, finer, quad_schema)
        e_finest = structural_error(counts, finest, quad_schema)
        assert e_finest <= e_finer <= e_coarse + 1e-12


class TestNumericalError:
    def test_single_cell_contribution(self, quad_schema):
        counts = np.array([100.0])
        schema = Schema([AttributeSchema("x", "numerical", range=(0.0, 1.0), min_interval=1.0)])
        division = finest_division(["x"], schema)
        value = numerical_error(counts, division, 1.0)
        assert value == pytest.approx(math.log(20) / 100, abs=1e-9)
        assert value == pytest.approx(0.029957, abs=1e-6)

    def test_budget_doubling_halves_error(self, quad_schema):
        counts = np.array([10.0, 20.0, 30.0, 40.0])
        division = finest_division(["x"], quad_schema)
        assert numerical_error(counts, division, 2.0) == pytest.approx(
            numerical_error(counts, division, 1.0) / 2
        )

    def test_merging_pattern_irrelevant_at_fixed_m(self, quad_schema):
        counts = np.array([5.0, 15.0, 25.0, 35.0])
        finest = finest_division(["x"], quad_schema)
        merged = pairwise_merge(quad_schema)
        assert numerical_error(counts, finest, 1.0) == pytest.approx(
            numerical_error(counts, merged, 1.0)
        )

    def test_extra_attribute_uses_summed_quantile(self):
        schema = Schema(
            [
                AttributeSchema("x", "numerical", range=(0.0, 2.0), min_interval=1.0),
                AttributeSchema("g", "categorical", categories=("a", "b", "c", "d")),
            ]
        )
        division = finest_division(["x", "g"], schema)
        assert summed_cells(division, ("x",)) == 4
        counts = np.array([50.0, 50.0])
        expected = ci_half_length(4, 1.0) * np.mean(1.0 / np.maximum(counts, 1.0))
        assert numerical_error(counts, division, 1.0, target_attributes=("x",)) == pytest.approx(
            expected
        )

    def test_zero_count_cells_floored_at_one(self, quad_schema):
        counts = np.array([0.0, 0.0, 0.0, 0.0])
        division = finest_division(["x"], quad_schema)
        assert numerical_error(counts, division, 1.0) == pytest.approx(math.log(20))


class TestAssess:
    @pytest.fixture
    def model(self, household_schema):
        marginals = default_marginals(household_schema, seed=1)
        return build_model(household_schema, marginals, {}, n_records=5000, seed=77)

    def test_penalty_is_sum_of_parts(self, model, household_schema):
        division = finest_division(["hepatitis_B", "family_c"], household_schema)
        report = assess(model, DataRequest(division=division, epsilon=1.0), ("hepatitis_B", "family_c"))
        assert report.penalty == report.structural_error + report.numerical_error

    def test_finest_request_huge_budget_vanishes(self, model, household_schema):
        division = finest_division(["hepatitis_B", "family_c"], household_schema)
        report = assess(
            model, DataRequest(division=division, epsilon=1e9), ("hepatitis_B", "family_c")
        )
        assert report.structural_error == 0.0
        assert report.penalty < 1e-6

    def test_uncovered_target_rejected(self, model, household_schema):
        division = finest_division(["hepatitis_B", "family_c"], household_schema)
        with pytest.raises(TargetNotCovered):
            assess(model, DataRequest(division=division, epsilon=1.0), ("hepatitis_B", "elder_c"))

    def test_sparse_cells_dominate_penalty_at_small_budget(self, household_schema):
        # A strongly skewed marginal at a small budget leaves rows whose CI
        # half-length exceeds the simulated count, driving the penalty above 1.
        marginals = default_marginals(household_schema, seed=1)
        marginals["hepatitis_B"] = np.array([0.01, 0.98, 0.01])
        model = build_model(household_schema, marginals, {}, n_records=7824, seed=5)
        division = finest_division(
            ["hepatitis_B", "children_c", "elder_c"], household_schema
        )
        report = assess(
            model, DataRequest(division=division, epsilon=0.25), ("hepatitis_B", "children_c")
        )
        counts = model.finest_counts(("hepatitis_B", "children_c"))
        assert (report.ci_half_length > counts).any()
        assert report.numerical_error * counts.size > 1.0

    def test_node_target_uses_one_dimensional_grid(self, model, household_schema):
        division = finest_division(["hepatitis_B", "family_c"], household_schema)
        report = assess(model, DataRequest(division=division, epsilon=1.0), ("hepatitis_B",))
        assert report.n_finest_cells == 3
        assert report.ci_half_length == pytest.approx(ci_half_length(7, 1.0))
