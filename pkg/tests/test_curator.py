from __future__ import annotations

import math
import threading

import numpy as np
import pytest

from dpexplore.curator import (
    BudgetLedger,
    DataRequest,
    charge,
    execute_request,
    laplace_noise,
    sample_laplace,
    sample_instance,
)
from dpexplore.division import finest_division
from dpexplore.errors import BudgetExceeded

from .oracles import laplace_abs_quantile


class TestSampleLaplace:
    def test_median_draw_is_zero(self):
        class FakeRng:
            def random(self, size):
                return np.full(size, 0.5)

        assert sample_laplace(1.0, FakeRng()) == 0.0

    def test_empirical_quantile_matches_closed_form(self):
        rng = np.random.default_rng(404)
        draws = laplace_noise(1.0, 100_000, rng)
        q95 = np.quantile(np.abs(draws), 0.95)
        expected = laplace_abs_quantile(1.0, 0.95)
        assert expected == pytest.approx(math.log(20))
        assert q95 == pytest.approx(expected, rel=0.03)

    def test_empirical_mean_is_centered(self):
        rng = np.random.default_rng(7)
        draws = laplace_noise(1.0, 100_000, rng)
        assert abs(draws.mean()) < 0.02

    def test_quantiles_across_levels(self):
        rng = np.random.default_rng(99)
        draws = np.abs(laplace_noise(2.0, 200_000, rng))
        for level in (0.5, 0.9, 0.95, 0.99):
            assert np.quantile(draws, level) == pytest.approx(
                laplace_abs_quantile(2.0, level), rel=0.05
            )

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            sample_laplace(0.0, np.random.default_rng(0))


class TestLedger:
    def test_simple_charge(self):
        ledger = BudgetLedger(2.0)
        charge(ledger, 0.4, "r1")
        assert ledger.epsilon_remain == pytest.approx(1.6)

    def test_rejection_leaves_state(self):
        ledger = BudgetLedger(2.0)
        ledger.charge(0.4, "r1")
        before = ledger.to_dict()
        with pytest.raises(BudgetExceeded):
            ledger.charge(1.7, "r2")
        assert ledger.to_dict() == before

    def test_first_request_share_of_unit_budget(self):
        ledger = BudgetLedger(1.0)
        ledger.charge(0.2, "first")
        assert ledger.epsilon_remain == pytest.approx(0.8)

    def test_never_negative_under_random_sequences(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            ledger = BudgetLedger(float(rng.uniform(0.5, 3.0)))
            for i in range(rng.integers(1, 12)):
                eps = float(rng.uniform(0.01, 1.2))
                before = ledger.to_dict()
                try:
                    ledger.charge(eps, f"r{i}")
                except BudgetExceeded:
                    assert ledger.to_dict() == before
                assert ledger.epsilon_remain >= -1e-12

    def test_concurrent_overbudget_races_serialize(self):
        for trial in range(20):
            ledger = BudgetLedger(1.0)
            results = []

            def submit():
                try:
                    ledger.charge(0.8, "race")
                    results.append("ok")
                except BudgetExceeded:
                    results.append("rejected")

            threads = [threading.Thread(target=submit) for _ in range(2)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert sorted(results) == ["ok", "rejected"]
            assert ledger.epsilon_remain == pytest.approx(0.2)

    def test_entries_append_only_roundtrip(self):
        ledger = BudgetLedger(2.0)
        ledger.charge(0.5, "a")
        ledger.charge(0.25, "b")
        again = BudgetLedger.from_dict(ledger.to_dict())
        assert again.entries == ledger.entries
        assert again.epsilon_remain == pytest.approx(1.25)


class TestExecuteRequest:
    def test_single_charge_for_whole_grid(self, household_schema):
        from dpexplore.demo import synth_survey

        ds = synth_survey()
        division = finest_division(["hepatitis_B", "family_c"], household_schema)
        assert division.n_cells == 21
        ledger = BudgetLedger(2.0)
        response = execute_request(
            ds, DataRequest(division=division, epsilon=2.0), ledger, np.random.default_rng(1)
        )
        assert len(response.cell_counts) == 21
        assert len(ledger.entries) == 1
        assert ledger.epsilon_remain == pytest.approx(0.0)

    def test_noise_calibration_at_95(self, tiny_dataset, tiny_schema):
        division = finest_division(["x"], tiny_schema)
        rng = np.random.default_rng(11)
        errors = []
        ledger = BudgetLedger(10_000.0)
        for _ in range(2000):
            response = execute_request(
                tiny_dataset, DataRequest(division=division, epsilon=1.0), ledger, rng
            )
            errors.extend(v - 1.0 for v in response.cell_counts.values())
        q95 = np.quantile(np.abs(errors), 0.95)
        assert q95 == pytest.approx(math.log(20), rel=0.05)

    def test_repeat_charges_twice_and_differs(self, tiny_dataset, tiny_schema):
        division = finest_division(["x"], tiny_schema)
        ledger = BudgetLedger(2.0)
        rng = np.random.default_rng(3)
        request = DataRequest(division=division, epsilon=0.5)
        r1 = execute_request(tiny_dataset, request, ledger, rng)
        r2 = execute_request(tiny_dataset, request, ledger, rng)
        assert ledger.epsilon_remain == pytest.approx(1.0)
        assert r1.cell_counts != r2.cell_counts

    def test_failed_charge_issues_nothing(self, tiny_dataset, tiny_schema):
        division = finest_division(["x"], tiny_schema)
        ledger = BudgetLedger(0.3)

        class ExplodingRng:
            def random(self, size):  # noise must never be drawn
                raise AssertionError("noise drawn despite failed charge")

        with pytest.raises(BudgetExceeded):
            execute_request(
                tiny_dataset, DataRequest(division=division, epsilon=0.5), ledger, ExplodingRng()
            )
        assert ledger.epsilon_remain == pytest.approx(0.3)

    def test_values_are_real_not_rounded(self, tiny_dataset, tiny_schema):
        division = finest_division(["x"], tiny_schema)
        ledger = BudgetLedger(1.0)
        response = execute_request(
            tiny_dataset, DataRequest(division=division, epsilon=1.0), ledger,
            np.random.default_rng(8),
        )
        assert any(v != round(v) for v in response.cell_counts.values())


class TestSampleInstance:
    def _response(self, value=50.0, epsilon=1.0):
        from dpexplore.curator import NoisyResponse
        from dpexplore.division import SetDivision, ValueDivision

        division = SetDivision((ValueDivision("policy", groups=(("A",), ("B",))),))
        return NoisyResponse(
            request=DataRequest(division=division, epsilon=epsilon),
            cell_counts={(0,): value, (1,): value / 2},
            issued_at="2026-01-01T00:00:00+00:00",
        )

    def test_instance_mean_is_noisy_value(self):
        response = self._response(50.0, 1.0)
        rng = np.random.default_rng(2)
        values = [sample_instance(response, rng)[(0,)] for _ in range(100_000)]
        assert np.mean(values) == pytest.approx(50.0, abs=0.05)

    def test_huge_epsilon_degenerates_to_noisy_value(self):
        response = self._response(50.0, 1e15)
        instance = sample_instance(response, np.random.default_rng(0))
        assert instance[(0,)] == pytest.approx(50.0, abs=1e-10)

    def test_seed_determinism(self):
        response = self._response()
        a = sample_instance(response, np.random.default_rng(42))
        b = sample_instance(response, np.random.default_rng(42))
        c = sample_instance(response, np.random.default_rng(43))
        assert a == b
        assert a != c
