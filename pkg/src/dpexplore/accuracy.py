"""Penalty assessment for candidate requests, on simulated data only.

A candidate request is judged against a target distribution (one intent
edge, i.e. an attribute pair, or a single attribute) by two relative
errors evaluated on the finest grid of the target:

* structural error: the division may be coarser than the finest grid, so
  requested numbers must be disaggregated back; the mismatch between the
  uniformly-disaggregated reconstruction and the actual numbers, relative
  to the actual numbers, is averaged over finest cells.
* numerical error: recovering a target cell from the request may require
  summing m noised cells (one per extra-attribute cell), so its 95%
  confidence half-length is that of a sum of m independent Laplace(1/eps)
  draws, again taken relative to the actual number and averaged.

The half-length for m = 1 is closed-form; for m > 1 it is a Monte Carlo
quantile under a fixed internal seed, computed once per m at unit scale
and rescaled by 1/eps (the quantile is exactly scale-invariant).

Nothing here may touch raw data: actual numbers always come from a
simulated dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .curator import DataRequest, laplace_noise
from .division import SetDivision, finest_to_division_map
from .errors import TargetNotCovered
from .schema import Schema

if TYPE_CHECKING:  # pragma: no cover
    from .simulate import SimulationModel

# Fixed seed and draw count for the summed-noise quantile table. The table
# is keyed by (m, confidence) at unit scale, so every epsilon shares it.
QUANTILE_MC_SEED = 90577
QUANTILE_MC_DRAWS = 1_000_000


@dataclass(frozen=True)
class AccuracyReport:
    """Assessed penalty of one request against one target distribution."""

    target: tuple[str, ...]
    structural_error: float
    numerical_error: float
    ci_half_length: float  # identical for every finest cell of the target
    n_finest_cells: int

    @property
    def penalty(self) -> float:
        return self.structural_error + self.numerical_error

    def ci_half_lengths(self) -> np.ndarray:
        return np.full(self.n_finest_cells, self.ci_half_length)

    def to_dict(self) -> dict:
        return {
            "target": list(self.target),
            "structural_error": self.structural_error,
            "numerical_error": self.numerical_error,
            "penalty": self.penalty,
            "ci_half_length": self.ci_half_length,
        }


@lru_cache(maxsize=None)
def _unit_abs_quantile(m: int, confidence: float, n_draws: int) -> float:
    """Monte Carlo ``confidence`` quantile of |sum of m Laplace(0,1) draws|."""
    rng = np.random.default_rng(QUANTILE_MC_SEED)
    total = np.zeros(n_draws)
    for _ in range(m):
        total += laplace_noise(1.0, n_draws, rng)
    return float(np.quantile(np.abs(total), confidence))


def ci_half_length(
    m: int,
    epsilon: float,
    confidence: float = 0.95,
    n_draws: int = QUANTILE_MC_DRAWS,
) -> float:
    """Half-length h with P(|sum of m Laplace(1/eps) draws| <= h) = confidence.

    m = 1 is exact: the two-sided tail gives h = ln(1/(1-confidence))/eps,
    i.e. ln(20)/eps at 95%. Larger m uses the cached Monte Carlo table.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    if m == 1:
        return math.log(1.0 / (1.0 - confidence)) / epsilon
    return _unit_abs_quantile(m, confidence, n_draws) / epsilon


def _division_cell_map(
    division: SetDivision, schema: Schema
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Flat finest-cell -> flat division-cell index map, plus the finest shape."""
    axis_maps = []
    finest_shape = []
    for vd in division.divisions:
        attr = schema.get(vd.attribute)
        axis_maps.append(finest_to_division_map(vd, attr))
        finest_shape.append(attr.n_bins)
    mesh = np.meshgrid(*axis_maps, indexing="ij")
    flat = np.ravel_multi_index([m.ravel() for m in mesh], division.shape)
    return flat, tuple(finest_shape)


def structural_error(
    finest_counts: np.ndarray, division: SetDivision, schema: Schema
) -> float:
    """Mean relative reconstruction error of a coarse division.

    Finest counts are aggregated into the division's cells (the requested
    numbers), disaggregated back uniformly over each cell's finest bins
    (the reconstructed numbers), and compared to the actual numbers with
    denominators floored at one record.
    """
    flat_map, finest_shape = _division_cell_map(division, schema)
    actual = np.asarray(finest_counts, dtype=np.float64)
    if actual.shape != finest_shape:
        raise ValueError(f"finest counts shaped {actual.shape}, expected {finest_shape}")
    n_div_cells = division.n_cells
    requested = np.bincount(flat_map, weights=actual.ravel(), minlength=n_div_cells)
    cell_sizes = np.bincount(flat_map, minlength=n_div_cells)
    reconstructed = (requested / cell_sizes)[flat_map]
    flat_actual = actual.ravel()
    rel = np.abs(reconstructed - flat_actual) / np.maximum(flat_actual, 1.0)
    return float(rel.mean())


def summed_cells(division: SetDivision, target_attributes: Sequence[str]) -> int:
    """Number of request cells summed to recover one target cell.

    With a grid partition this is the product of the division sizes of the
    attributes not in the target; it is 1 when the request employs exactly
    the target's attributes.
    """
    extra = [d for d in division.divisions if d.attribute not in set(target_attributes)]
    m = 1
    for d in extra:
        m *= d.size
    return m


def numerical_error(
    finest_counts: np.ndarray,
    division: SetDivision,
    epsilon: float,
    target_attributes: Sequence[str] | None = None,
    confidence: float = 0.95,
) -> float:
    """Mean relative 95% half-length of the noise on recovered target cells."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    targets = tuple(target_attributes) if target_attributes is not None else division.attributes
    missing = set(targets) - set(division.attributes)
    if missing:
        raise TargetNotCovered(f"target attributes not in division: {sorted(missing)}")
    m = summed_cells(division, targets)
    h = ci_half_length(m, epsilon, confidence)
    actual = np.asarray(finest_counts, dtype=np.float64).ravel()
    return float(h * np.mean(1.0 / np.maximum(actual, 1.0)))


def assess(
    model: "SimulationModel",
    request: DataRequest,
    target: Sequence[str],
    confidence: float = 0.95,
) -> AccuracyReport:
    """Penalty of a request against a target edge or node, on simulated data."""
    target = tuple(target)
    if not target:
        raise TargetNotCovered("empty target")
    if not set(target) <= set(request.division.attributes):
        raise TargetNotCovered(
            f"target {target} not covered by request over {request.division.attributes}"
        )
    simulated = model.sampled_dataset()
    actual = finest_target_counts(model, target)
    e_struct = structural_error(
        actual, request.division.restricted_to(target), simulated.schema
    )
    m = summed_cells(request.division, target)
    h = ci_half_length(m, request.epsilon, confidence)
    e_num = float(h * np.mean(1.0 / np.maximum(actual, 1.0)))
    return AccuracyReport(
        target=target,
        structural_error=e_struct,
        numerical_error=e_num,
        ci_half_length=h,
        n_finest_cells=actual.size,
    )


def finest_target_counts(model: "SimulationModel", target: Sequence[str]) -> np.ndarray:
    """Simulated finest-grid counts for a target attribute tuple (cached)."""
    return model.finest_counts(tuple(target))
