"""The curator trust zone: budgeted count requests under the Laplace mechanism.

Count queries have sensitivity 1, so a request paying budget epsilon adds
independent Laplace(1/epsilon) noise to each cell count. Because the cells
of a set division are pairwise disjoint, the whole grid is charged once
(parallel composition); repeating the same request charges again. The
ledger is append-only and the remaining budget can never go negative:
once a response is issued there is no rollback.

Noisy counts stay real-valued. They are neither rounded nor clamped at
zero: clamping would bias sums, and downstream views encode negative
values explicitly.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .division import Cell, SetDivision, count_array, validate_division
from .errors import BudgetExceeded
from .schema import Dataset

_BUDGET_TOL = 1e-12


def sample_laplace(scale: float, rng: np.random.Generator) -> float:
    """One draw from Laplace(0, scale) by inverse CDF:

        x = -scale * sign(u - 1/2) * ln(1 - 2|u - 1/2|),  u ~ Uniform(0, 1)
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    return float(laplace_noise(scale, 1, rng)[0])


def laplace_noise(scale: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vector of independent Laplace(0, scale) draws (same inverse CDF form)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = rng.random(size)
    # rng.random() yields [0, 1); nudge exact zeros into the open interval.
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    centered = u - 0.5
    return -scale * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))


@dataclass(frozen=True)
class DataRequest:
    """A set division, the budget paid for it, and its order in a strategy."""

    division: SetDivision
    epsilon: float
    order: int = 1

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> dict:
        return {
            "division": self.division.to_dict(),
            "epsilon": self.epsilon,
            "order": self.order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataRequest":
        return cls(
            division=SetDivision.from_dict(d["division"]),
            epsilon=float(d["epsilon"]),
            order=int(d.get("order", 1)),
        )


@dataclass
class NoisyResponse:
    """Per-cell noised counts for one request. Values may be negative."""

    request: DataRequest
    cell_counts: dict[Cell, float]
    issued_at: str
    id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])

    def values_array(self) -> np.ndarray:
        arr = np.empty(self.request.division.shape)
        for cell, v in self.cell_counts.items():
            arr[cell] = v
        return arr

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "request": self.request.to_dict(),
            "issued_at": self.issued_at,
            "cells": [
                {"cell": list(c), "value": v} for c, v in sorted(self.cell_counts.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoisyResponse":
        return cls(
            request=DataRequest.from_dict(d["request"]),
            cell_counts={tuple(e["cell"]): float(e["value"]) for e in d["cells"]},
            issued_at=d["issued_at"],
            id=d["id"],
        )


class BudgetLedger:
    """Irreversible privacy-budget account.

    Entries are append-only; a rejected charge leaves the ledger untouched.
    Mutations are serialized by an internal lock so two racing over-budget
    charges can never both succeed.
    """

    def __init__(self, epsilon_total: float, entries: list[tuple[str, float]] | None = None):
        if epsilon_total <= 0:
            raise ValueError("epsilon_total must be positive")
        self.epsilon_total = float(epsilon_total)
        self.entries: list[tuple[str, float]] = list(entries or [])
        self._lock = threading.Lock()
        if self.epsilon_remain < -_BUDGET_TOL:
            raise BudgetExceeded("ledger entries exceed the total budget")

    @property
    def epsilon_spent(self) -> float:
        return float(sum(e for _, e in self.entries))

    @property
    def epsilon_remain(self) -> float:
        return self.epsilon_total - self.epsilon_spent

    @property
    def spent_fraction(self) -> float:
        return self.epsilon_spent / self.epsilon_total

    def charge(self, epsilon: float, request_id: str) -> None:
        """Atomically append a charge or raise BudgetExceeded with no change."""
        if epsilon <= 0:
            raise ValueError("charge must be positive")
        with self._lock:
            if epsilon > self.epsilon_remain + _BUDGET_TOL:
                raise BudgetExceeded(
                    f"charge {epsilon} exceeds remaining budget {self.epsilon_remain}"
                )
            self.entries.append((request_id, float(epsilon)))

    def to_dict(self) -> dict:
        return {
            "epsilon_total": self.epsilon_total,
            "epsilon_remain": self.epsilon_remain,
            "entries": [{"request_id": rid, "epsilon": e} for rid, e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BudgetLedger":
        return cls(
            epsilon_total=float(d["epsilon_total"]),
            entries=[(e["request_id"], float(e["epsilon"])) for e in d["entries"]],
        )


def charge(ledger: BudgetLedger, epsilon: float, request_id: str) -> BudgetLedger:
    """Functional-style wrapper over BudgetLedger.charge."""
    ledger.charge(epsilon, request_id)
    return ledger


def execute_request(
    dataset: Dataset,
    request: DataRequest,
    ledger: BudgetLedger,
    rng: np.random.Generator,
) -> NoisyResponse:
    """Charge the budget, then noise the exact grid counts.

    The charge happens before any noise is drawn; a failed charge draws
    nothing and issues nothing, so failures leak no information. Raw counts
    never leave this function.
    """
    validate_division(request.division, dataset.schema)
    response_id = uuid.uuid4().hex[:12]
    ledger.charge(request.epsilon, response_id)

    exact = count_array(dataset, request.division).astype(np.float64)
    noise = laplace_noise(1.0 / request.epsilon, exact.size, rng).reshape(exact.shape)
    noisy = exact + noise
    cell_counts = {tuple(idx): float(noisy[idx]) for idx in np.ndindex(*exact.shape)}
    return NoisyResponse(
        request=request,
        cell_counts=cell_counts,
        issued_at=datetime.now(timezone.utc).isoformat(),
        id=response_id,
    )


def sample_instance(response: NoisyResponse, rng: np.random.Generator) -> dict[Cell, float]:
    """A plausible noise-removed instance of the true counts.

    Subtracting a fresh Laplace(1/epsilon) draw from each noisy value makes
    the likelihood of an instance coincide with the probability of the
    corresponding noise; repeated calls give new instances.
    """
    eps = response.request.epsilon
    cells = sorted(response.cell_counts)
    noise = laplace_noise(1.0 / eps, len(cells), rng)
    return {c: response.cell_counts[c] - float(noise[i]) for i, c in enumerate(cells)}
