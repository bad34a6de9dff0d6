"""Gaussian-copula simulation of the sensitive table.

The planner side never sees raw data, so every accuracy estimate runs on
data sampled from this model: per-attribute marginals over finest bins
plus Spearman rank correlations between numerical attribute pairs, tied
together by a Gaussian copula. Marginals default to random draws rather
than uniform ones so repeated sessions surface diverse possibilities.

The latent Pearson correlation for a Spearman value rho is the exact
Gaussian-copula relation r = 2*sin(pi*rho/6). User-entered correlation
guesses can be jointly inconsistent, so the latent matrix is repaired to
the nearest positive semi-definite one by eigenvalue clipping.

Categorical attributes carry no rank correlation and are sampled
independently from their marginals.
"""

from __future__ import annotations

import math
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from scipy.special import ndtr

from . import accuracy
from .curator import DataRequest, NoisyResponse, laplace_noise
from .division import count_array, finest_division, validate_division
from .errors import InvalidCorrelation, InvalidMarginal
from .schema import Dataset, Schema, make_dataset

_MARGINAL_TOL = 1e-9
_PSD_EIGEN_FLOOR = 1e-10

PairKey = tuple[str, str]


def pair_key(a: str, b: str) -> PairKey:
    return (a, b) if a <= b else (b, a)


@dataclass
class SimulationModel:
    """Generative model over the table; the only data the planner may see.

    Immutable by convention: feedback integration returns a new model.
    ``claims`` maps each estimated target (attribute name or pair key) to
    {"penalty": assessed penalty, "response_id": producing response or
    None for exact public facts}; priors and defaults make no claim.
    """

    schema: Schema
    marginals: dict[str, np.ndarray]
    spearman: dict[PairKey, float]
    n_records: int
    seed: int
    claims: dict = field(default_factory=dict)
    latent_corr: np.ndarray | None = None
    _sample_cache: Dataset | None = field(default=None, repr=False, compare=False)
    _counts_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def numerical_attributes(self) -> list[str]:
        return [a.name for a in self.schema if a.kind == "numerical"]

    def sampled_dataset(self) -> Dataset:
        """The model's simulated table (sampled once, then reused)."""
        if self._sample_cache is None:
            self._sample_cache = sample(self)
        return self._sample_cache

    def finest_counts(self, attributes: tuple[str, ...]) -> np.ndarray:
        """Finest-grid counts of the simulated table over some attributes."""
        if attributes not in self._counts_cache:
            div = finest_division(attributes, self.schema)
            self._counts_cache[attributes] = count_array(
                self.sampled_dataset(), div
            ).astype(np.float64)
        return self._counts_cache[attributes]

    def to_dict(self) -> dict:
        return {
            "marginals": {k: list(map(float, v)) for k, v in self.marginals.items()},
            "spearman": [
                {"pair": list(k), "value": v} for k, v in sorted(self.spearman.items())
            ],
            "n_records": self.n_records,
            "seed": self.seed,
            "claims": {
                ("|".join(k) if isinstance(k, tuple) else k): v
                for k, v in self.claims.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict, schema: Schema) -> "SimulationModel":
        claims = {}
        for k, v in d.get("claims", {}).items():
            key = tuple(k.split("|")) if "|" in k else k
            claims[key] = v
        return build_model(
            schema,
            {k: np.asarray(v, dtype=np.float64) for k, v in d["marginals"].items()},
            {pair_key(*e["pair"]): float(e["value"]) for e in d.get("spearman", [])},
            n_records=int(d["n_records"]),
            seed=int(d["seed"]),
            claims=claims,
        )


def default_marginals(schema: Schema, seed: int) -> dict[str, np.ndarray]:
    """Random probability vectors over each attribute's finest bins.

    Deterministic under the seed; uniform positive draws, normalized.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for attr in schema:
        draws = rng.random(attr.n_bins)
        draws = np.where(draws <= 0.0, np.nextafter(0.0, 1.0), draws)
        out[attr.name] = draws / draws.sum()
    return out


def validate_marginal(name: str, marginal: np.ndarray, n_bins: int) -> np.ndarray:
    m = np.asarray(marginal, dtype=np.float64)
    if m.shape != (n_bins,):
        raise InvalidMarginal(f"{name}: marginal has {m.shape} entries, expected {n_bins}")
    if (m < 0).any():
        raise InvalidMarginal(f"{name}: marginal entries must be non-negative")
    if abs(m.sum() - 1.0) > _MARGINAL_TOL:
        raise InvalidMarginal(f"{name}: marginal sums to {m.sum()}, not 1")
    return m


def spearman_to_latent(rho: float) -> float:
    """Exact latent Pearson correlation of a Gaussian copula with Spearman rho."""
    if not -1.0 <= rho <= 1.0:
        raise InvalidCorrelation(f"Spearman value {rho} outside [-1, 1]")
    return 2.0 * math.sin(math.pi * rho / 6.0)


def _psd_repair(matrix: np.ndarray) -> np.ndarray:
    """Clip eigenvalues at a small floor and renormalize the diagonal to 1."""
    sym = (matrix + matrix.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() >= _PSD_EIGEN_FLOOR:
        return sym
    clipped = np.clip(eigvals, _PSD_EIGEN_FLOOR, None)
    repaired = (eigvecs * clipped) @ eigvecs.T
    d = np.sqrt(np.diag(repaired))
    repaired = repaired / np.outer(d, d)
    np.fill_diagonal(repaired, 1.0)
    return repaired


def build_model(
    schema: Schema,
    marginals: dict[str, np.ndarray],
    spearman: dict[PairKey, float] | None = None,
    n_records: int = 0,
    seed: int = 0,
    claims: dict | None = None,
) -> SimulationModel:
    """Validate inputs and derive the latent Gaussian correlation matrix."""
    checked = {}
    for attr in schema:
        if attr.name not in marginals:
            raise InvalidMarginal(f"missing marginal for attribute {attr.name!r}")
        checked[attr.name] = validate_marginal(attr.name, marginals[attr.name], attr.n_bins)

    spearman = dict(spearman or {})
    nums = [a.name for a in schema if a.kind == "numerical"]
    num_set = set(nums)
    for (a, b), rho in spearman.items():
        if a not in num_set or b not in num_set or a == b:
            raise InvalidCorrelation(
                f"rank correlation must pair two distinct numerical attributes, got ({a}, {b})"
            )
        if not -1.0 <= rho <= 1.0:
            raise InvalidCorrelation(f"Spearman value {rho} outside [-1, 1]")

    latent = np.eye(len(nums))
    index = {n: i for i, n in enumerate(nums)}
    for (a, b), rho in spearman.items():
        r = spearman_to_latent(rho)
        latent[index[a], index[b]] = r
        latent[index[b], index[a]] = r
    latent = _psd_repair(latent) if len(nums) else latent

    return SimulationModel(
        schema=schema,
        marginals=checked,
        spearman=spearman,
        n_records=int(n_records),
        seed=int(seed),
        claims=dict(claims or {}),
        latent_corr=latent,
    )


def sample(model: SimulationModel) -> Dataset:
    """Draw a simulated table of ``n_records`` rows from the model.

    Numerical attributes come from the copula: a correlated latent Gaussian
    vector is pushed through each marginal's piecewise-uniform inverse CDF,
    which preserves rank correlations exactly and spreads values inside
    finest bins. Categorical attributes are sampled independently.
    """
    rng = np.random.default_rng(model.seed)
    n = model.n_records
    nums = model.numerical_attributes
    columns: dict[str, np.ndarray] = {}

    if nums:
        corr = model.latent_corr if model.latent_corr is not None else np.eye(len(nums))
        eigvals, eigvecs = np.linalg.eigh(corr)
        factor = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
        z = rng.standard_normal((n, len(nums))) @ factor.T
        u = np.clip(ndtr(z), 1e-15, 1.0 - 1e-16)
        for j, name in enumerate(nums):
            attr = model.schema.get(name)
            p = model.marginals[name]
            cum = np.concatenate(([0.0], np.cumsum(p)))
            cum[-1] = 1.0
            bins = np.clip(np.searchsorted(cum[1:], u[:, j], side="left"), 0, attr.n_bins - 1)
            frac = (u[:, j] - cum[bins]) / np.maximum(p[bins], 1e-300)
            lo, _ = attr.range  # type: ignore[misc]
            step = attr.min_interval
            values = lo + (bins + frac) * step  # type: ignore[operator]
            hi_edge = lo + (bins + 1) * step  # type: ignore[operator]
            columns[name] = np.where(
                values >= hi_edge, np.nextafter(hi_edge, -np.inf), values
            )

    for attr in model.schema:
        if attr.kind == "categorical":
            columns[attr.name] = rng.choice(attr.n_bins, size=n, p=model.marginals[attr.name])

    if n == 0:
        for attr in model.schema:
            dtype = np.float64 if attr.kind == "numerical" else np.int64
            columns[attr.name] = np.zeros(0, dtype=dtype)

    return make_dataset(model.schema, columns, n)


def simulate_response(
    model: SimulationModel, request: DataRequest, rng: np.random.Generator
) -> NoisyResponse:
    """Preview a request on simulated data: same noising path as the real
    curator, but no budget is charged and no raw data is touched."""
    validate_division(request.division, model.schema)
    exact = count_array(model.sampled_dataset(), request.division).astype(np.float64)
    noise = laplace_noise(1.0 / request.epsilon, exact.size, rng).reshape(exact.shape)
    noisy = exact + noise
    return NoisyResponse(
        request=request,
        cell_counts={tuple(idx): float(noisy[idx]) for idx in np.ndindex(*exact.shape)},
        issued_at=datetime.now(timezone.utc).isoformat(),
        id="sim-" + uuid.uuid4().hex[:12],
    )


def _uniform_disaggregate(values: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Spread each division-bin value equally over its finest bins."""
    return np.repeat(values / sizes, sizes)


def marginal_estimate(response: NoisyResponse, attribute: str, schema: Schema) -> np.ndarray:
    """Finest-bin probability estimate for one attribute of a response.

    Projects the noisy grid onto the attribute, disaggregates uniformly to
    finest bins, clamps negatives to zero and renormalizes (degenerate
    all-nonpositive estimates fall back to uniform).
    """
    division = response.request.division
    axis = division.attributes.index(attribute)
    values = response.values_array()
    projected = values.sum(axis=tuple(i for i in range(values.ndim) if i != axis))

    vd = division.division_for(attribute)
    attr = schema.get(attribute)
    if vd.intervals is not None:
        sizes = np.array([
            round((hi - lo) / attr.min_interval) for lo, hi in vd.intervals  # type: ignore[operator]
        ])
    else:
        sizes = np.array([len(g) for g in vd.groups])  # type: ignore[union-attr]
    finest = _uniform_disaggregate(projected, sizes)
    clamped = np.clip(finest, 0.0, None)
    total = clamped.sum()
    if total <= 0:
        return np.full(attr.n_bins, 1.0 / attr.n_bins)
    return clamped / total


def _weighted_spearman(table: np.ndarray) -> float | None:
    """Spearman rank correlation of a 2-D weight table (mid-ranks over the
    row/column order). Returns None when degenerate."""
    w = np.clip(table, 0.0, None)
    total = w.sum()
    if total <= 0:
        return None
    row_w = w.sum(axis=1)
    col_w = w.sum(axis=0)

    def midranks(weights: np.ndarray) -> np.ndarray:
        before = np.concatenate(([0.0], np.cumsum(weights)[:-1]))
        return before + (weights + 1.0) / 2.0

    rx = midranks(row_w)[:, None] * np.ones_like(w)
    ry = midranks(col_w)[None, :] * np.ones_like(w)
    mean_x = (w * rx).sum() / total
    mean_y = (w * ry).sum() / total
    cov = (w * (rx - mean_x) * (ry - mean_y)).sum() / total
    var_x = (w * (rx - mean_x) ** 2).sum() / total
    var_y = (w * (ry - mean_y) ** 2).sum() / total
    if var_x <= 0 or var_y <= 0:
        return None
    return float(np.clip(cov / math.sqrt(var_x * var_y), -1.0, 1.0))


def claim_penalty(claims: dict, key) -> float:
    entry = claims.get(key)
    return math.inf if entry is None else float(entry["penalty"])


def _beats_claim(claims: dict, key, penalty: float, response_id: str) -> bool:
    entry = claims.get(key)
    if entry is None:
        return True
    if entry.get("response_id") == response_id:
        # This response already produced the stored estimate.
        return False
    return penalty < float(entry["penalty"])


def integrate_feedback(model: SimulationModel, response: NoisyResponse) -> SimulationModel:
    """Fold a noisy response into the model's known facts.

    Each covered attribute's marginal (and each covered numerical pair's
    Spearman estimate) replaces the stored one only when the response's
    assessed penalty for that target beats the stored claim, so a worse
    response never overwrites a better one. Idempotent for an identical
    response.
    """
    division = response.request.division
    attrs = division.attributes
    marginals = dict(model.marginals)
    spearman = dict(model.spearman)
    claims = dict(model.claims)
    changed = False

    for a in attrs:
        penalty = accuracy.assess(model, response.request, (a,)).penalty
        if _beats_claim(claims, a, penalty, response.id):
            marginals[a] = marginal_estimate(response, a, model.schema)
            claims[a] = {"penalty": penalty, "response_id": response.id}
            changed = True

    nums = set(model.numerical_attributes)
    pairs = [
        pair_key(a, b)
        for i, a in enumerate(attrs)
        for b in attrs[i + 1 :]
        if a in nums and b in nums
    ]
    values = response.values_array()
    for key in pairs:
        penalty = accuracy.assess(model, response.request, key).penalty
        if _beats_claim(claims, key, penalty, response.id):
            ai = attrs.index(key[0])
            bi = attrs.index(key[1])
            other = tuple(i for i in range(values.ndim) if i not in (ai, bi))
            table = values.sum(axis=other) if other else values
            if ai > bi:
                table = table.T
            rho = _weighted_spearman(table)
            if rho is not None:
                spearman[key] = rho
                claims[key] = {"penalty": penalty, "response_id": response.id}
                changed = True

    if not changed:
        return model
    return build_model(
        model.schema,
        marginals,
        spearman,
        n_records=model.n_records,
        seed=model.seed,
        claims=claims,
    )
