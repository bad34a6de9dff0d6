"""Strategy recommendation by tabular Q-learning over request plans.

For every prototype (a minimal cover of the intent by attribute sets), an
agent repeatedly rolls out episodes that pick, per step, an unused
attribute set, a division scheme for it, and a budget level. Step rewards
are the weighted negated accuracy penalties of the targets assigned to
the chosen set; the terminal step additionally earns the budget-
consumption bonus, which penalizes a mismatch between the spent fraction
and the analyst's progress estimate. Greedy rollouts from each distinct
first action turn the learned table into concrete strategy candidates,
which are deduplicated, scored, and ranked (lower weighted penalty is
better).

The agent's whole world is the simulation model, the intent weights and
the ledger balance; it has no access path to raw data.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .accuracy import ci_half_length, structural_error, summed_cells
from .curator import BudgetLedger, DataRequest
from .division import SetDivision, ValueDivision, finest_division, merged_division
from .errors import NoFeasibleAction
from .intent import (
    AttributeSet,
    IntentGraph,
    Prototype,
    Target,
    enumerate_prototypes,
    target_weights,
)
from .simulate import SimulationModel

_UNIT_TOL = 1e-9


def budget_bonus(
    p: float,
    epsilon_total: float,
    epsilon_remain: float,
    n_records: int,
    weight: float = -0.1,
) -> float:
    """One-time terminal reward tying budget consumption to progress:

        weight * N * (p+1)/2 * |p - spent_fraction|

    Zero exactly when the spent fraction matches the progress estimate.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("progress estimate must lie in [0, 1]")
    if not -_UNIT_TOL <= epsilon_remain <= epsilon_total + _UNIT_TOL:
        raise ValueError("epsilon_remain must lie in [0, epsilon_total]")
    if n_records < 0:
        raise ValueError("record count must be non-negative")
    spent_fraction = (epsilon_total - epsilon_remain) / epsilon_total
    return weight * n_records * (p + 1.0) / 2.0 * abs(p - spent_fraction)


def candidate_divisions(
    attribute: str, model: SimulationModel, merge_threshold: float = 0.05
) -> list[ValueDivision]:
    """Division schemes worth considering for one attribute.

    Categorical attributes get singleton groups only. Numerical ones get
    the finest lattice, uniform merges by factors 2 and 4, and one
    data-adaptive scheme that merges adjacent bins whose simulated counts
    fall below ``merge_threshold`` of the largest bin (so sparse tails
    collapse while informative splits survive).
    """
    attr = model.schema.get(attribute)
    if attr.kind == "categorical":
        return [finest_division([attribute], model.schema).divisions[0]]

    k = attr.n_bins
    seen: dict[tuple[int, ...], ValueDivision] = {}

    def add(boundaries: list[int]) -> None:
        key = tuple(boundaries)
        if key not in seen:
            seen[key] = merged_division(attr, boundaries)

    add(list(range(1, k)))
    add(list(range(2, k, 2)))
    add(list(range(4, k, 4)))

    expected = model.marginals[attribute] * max(model.n_records, 1)
    low = expected < merge_threshold * expected.max()
    add([i for i in range(1, k) if not (low[i - 1] and low[i])])

    return list(seen.values())


@dataclass(frozen=True)
class QConfig:
    """Q-learning hyperparameters and discretization choices."""

    alpha: float = 0.1
    gamma: float = 0.95
    epsilon_greedy: float = 0.2
    epsilon_decay: float = 0.999
    episodes: int = 5000
    seed: int = 0
    consumption_weight: float = -0.1
    budget_levels: int = 20
    max_set_size: int = 3
    max_prototypes: int = 64
    merge_threshold: float = 0.05
    confidence: float = 0.95

    def __post_init__(self) -> None:
        for name in ("alpha", "gamma", "epsilon_greedy", "epsilon_decay"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.consumption_weight >= 0:
            raise ValueError("consumption_weight must be negative")
        if self.episodes < 1 or self.budget_levels < 1:
            raise ValueError("episodes and budget_levels must be positive")


@dataclass(frozen=True)
class Action:
    """One data request choice inside an episode."""

    set_index: int
    attribute_set: AttributeSet
    division: SetDivision
    eps_units: int
    epsilon: float


@dataclass
class StrategyCandidate:
    """A ranked, fully-specified request sequence covering the intent."""

    requests: tuple[DataRequest, ...]
    total_epsilon: float
    per_target_penalty: dict[Target, float]
    score: float
    budget_bonus: float
    prototype: Prototype

    def to_dict(self) -> dict:
        return {
            "requests": [r.to_dict() for r in self.requests],
            "total_epsilon": self.total_epsilon,
            "per_target_penalty": [
                {"target": list(t), "penalty": p}
                for t, p in sorted(self.per_target_penalty.items())
            ],
            "score": self.score,
            "budget_bonus": self.budget_bonus,
            "attribute_sets": [list(s) for s in self.prototype.attribute_sets],
        }


@dataclass
class _TargetTerm:
    """Cached pieces of one target's penalty under one (set, division)."""

    target: Target
    weight: float
    structural: float
    numeric_unit: float  # unit-scale CI quantile times mean(1/max(actual, 1))

    def penalty(self, epsilon: float) -> float:
        return self.structural + self.numeric_unit / epsilon


@dataclass
class _Plan:
    """Precomputed MDP for one prototype at one ledger state."""

    prototype: Prototype
    actions: list[Action]
    action_terms: list[list[_TargetTerm]]
    action_rewards: np.ndarray  # accuracy part only
    n_sets: int
    unit: float
    levels: int
    rem_units0: int
    epsilon_total: float
    epsilon_remain0: float
    progress: float
    n_records: int
    consumption_weight: float
    legal: list[list[np.ndarray]] = field(default_factory=list)  # [mask][rem_units]
    bonus_by_units: np.ndarray | None = None
    bucket_by_units: np.ndarray | None = None

    @property
    def full_mask(self) -> int:
        return (1 << self.n_sets) - 1

    def state_index(self, mask: int, units_spent: int) -> int:
        return mask * 21 + int(self.bucket_by_units[units_spent])

    @property
    def n_states(self) -> int:
        return (1 << self.n_sets) * 21


@dataclass
class QTable:
    """Learned action values plus the plan they were trained on."""

    plan: _Plan
    q: np.ndarray

    def greedy_action(self, mask: int, units_spent: int, rem_units: int) -> int | None:
        legal = self.plan.legal[mask][rem_units]
        if legal.size == 0:
            return None
        s = self.plan.state_index(mask, units_spent)
        values = self.q[s, legal]
        return int(legal[int(np.argmax(values))])


def _unit_numeric_quantile(m: int, confidence: float) -> float:
    """CI half-length numerator at unit budget (h(m, eps) = this / eps)."""
    return ci_half_length(m, 1.0, confidence)


def _build_plan(
    prototype: Prototype,
    model: SimulationModel,
    ledger: BudgetLedger,
    weights: dict[Target, float],
    config: QConfig,
    progress: float,
) -> _Plan:
    unit = ledger.epsilon_total / config.budget_levels
    rem_units0 = int(math.floor(ledger.epsilon_remain / unit + _UNIT_TOL))
    if rem_units0 < 1:
        raise NoFeasibleAction(
            f"remaining budget {ledger.epsilon_remain} cannot fund the smallest level {unit}"
        )

    sets = prototype.attribute_sets
    assigned: dict[AttributeSet, list[Target]] = {s: [] for s in sets}
    for target, s in prototype.target_assignment.items():
        assigned[s].append(target)

    actions: list[Action] = []
    action_terms: list[list[_TargetTerm]] = []
    rewards: list[float] = []
    for set_index, attribute_set in enumerate(sets):
        per_attr = [
            candidate_divisions(a, model, config.merge_threshold) for a in attribute_set
        ]
        combos = [SetDivision(tuple(c)) for c in itertools.product(*per_attr)]
        for division in combos:
            terms = []
            for target in sorted(assigned[attribute_set]):
                actual = model.finest_counts(target)
                e_struct = structural_error(
                    actual, division.restricted_to(target), model.schema
                )
                m = summed_cells(division, target)
                inv_mean = float(np.mean(1.0 / np.maximum(actual, 1.0)))
                terms.append(
                    _TargetTerm(
                        target=target,
                        weight=weights[target],
                        structural=e_struct,
                        numeric_unit=_unit_numeric_quantile(m, config.confidence) * inv_mean,
                    )
                )
            for eps_units in range(1, min(config.budget_levels, rem_units0) + 1):
                epsilon = eps_units * unit
                reward = -sum(t.weight * t.penalty(epsilon) for t in terms)
                actions.append(
                    Action(
                        set_index=set_index,
                        attribute_set=attribute_set,
                        division=division,
                        eps_units=eps_units,
                        epsilon=epsilon,
                    )
                )
                action_terms.append(terms)
                rewards.append(reward)

    plan = _Plan(
        prototype=prototype,
        actions=actions,
        action_terms=action_terms,
        action_rewards=np.asarray(rewards),
        n_sets=len(sets),
        unit=unit,
        levels=config.budget_levels,
        rem_units0=rem_units0,
        epsilon_total=ledger.epsilon_total,
        epsilon_remain0=ledger.epsilon_remain,
        progress=progress,
        n_records=model.n_records,
        consumption_weight=config.consumption_weight,
    )

    by_set_units: dict[tuple[int, int], list[int]] = {}
    for i, a in enumerate(actions):
        by_set_units.setdefault((a.set_index, a.eps_units), []).append(i)
    plan.legal = []
    for mask in range(1 << plan.n_sets):
        per_rem = []
        for rem in range(rem_units0 + 1):
            idx = [
                i
                for (set_idx, units), ids in sorted(by_set_units.items())
                if not (mask >> set_idx) & 1 and units <= rem
                for i in ids
            ]
            per_rem.append(np.asarray(sorted(idx), dtype=np.int64))
        plan.legal.append(per_rem)

    units = np.arange(rem_units0 + 1)
    remain_after = plan.epsilon_remain0 - units * unit
    spent_frac = (plan.epsilon_total - remain_after) / plan.epsilon_total
    plan.bonus_by_units = (
        config.consumption_weight
        * plan.n_records
        * (progress + 1.0)
        / 2.0
        * np.abs(progress - spent_frac)
    )
    plan.bucket_by_units = np.minimum(20, np.floor(20 * spent_frac + _UNIT_TOL)).astype(int)
    return plan


def step_reward(
    request: DataRequest,
    assigned_targets: dict[Target, float],
    model: SimulationModel,
    *,
    terminal: bool,
    progress: float = 1.0,
    epsilon_total: float = 1.0,
    epsilon_remain_after: float = 0.0,
    consumption_weight: float = -0.1,
    confidence: float = 0.95,
) -> float:
    """Reward of one request: weighted negated penalties of its assigned
    targets, plus the consumption bonus when it ends the strategy."""
    from .accuracy import assess

    reward = 0.0
    for target, weight in assigned_targets.items():
        reward -= weight * assess(model, request, target, confidence).penalty
    if terminal:
        reward += budget_bonus(
            progress, epsilon_total, epsilon_remain_after, model.n_records, consumption_weight
        )
    return reward


def train(
    prototype: Prototype,
    model: SimulationModel,
    ledger: BudgetLedger,
    weights: dict[Target, float],
    config: QConfig,
    progress: float = 1.0,
    rng: np.random.Generator | None = None,
) -> QTable:
    """Standard tabular Q-learning over the prototype's request MDP.

    Episodes end when every attribute set has been requested or nothing
    affordable remains; deterministic under the seed.
    """
    plan = _build_plan(prototype, model, ledger, weights, config, progress)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    return _train_plan(plan, config, rng)


def _train_plan(plan: _Plan, config: QConfig, rng: np.random.Generator) -> QTable:
    q = np.zeros((plan.n_states, len(plan.actions)))
    if not plan.legal[0][plan.rem_units0].size:
        raise NoFeasibleAction("no affordable request at the initial state")

    actions = plan.actions
    rewards = plan.action_rewards
    bonus = plan.bonus_by_units
    legal_table = plan.legal
    full_mask = plan.full_mask
    alpha = config.alpha
    gamma = config.gamma
    explore = config.epsilon_greedy

    for _ in range(config.episodes):
        mask = 0
        rem = plan.rem_units0
        units_spent = 0
        while True:
            legal = legal_table[mask][rem]
            if legal.size == 0:
                break
            s = plan.state_index(mask, units_spent)
            if rng.random() < explore:
                a = int(legal[rng.integers(legal.size)])
            else:
                a = int(legal[int(np.argmax(q[s, legal]))])
            act = actions[a]
            next_mask = mask | (1 << act.set_index)
            next_rem = rem - act.eps_units
            next_units = units_spent + act.eps_units
            next_legal = legal_table[next_mask][next_rem]
            terminal = next_mask == full_mask or next_legal.size == 0
            r = rewards[a]
            if terminal:
                r += bonus[next_units]
                target = r
            else:
                s2 = plan.state_index(next_mask, next_units)
                target = r + gamma * float(np.max(q[s2, next_legal]))
            q[s, a] += alpha * (target - q[s, a])
            if terminal:
                break
            mask, rem, units_spent = next_mask, next_rem, next_units
        explore *= config.epsilon_decay

    return QTable(plan=plan, q=q)


def _rollout(table: QTable, first_action: int) -> list[int] | None:
    """Greedy completion from one forced first action; None on dead ends."""
    plan = table.plan
    chosen = [first_action]
    act = plan.actions[first_action]
    mask = 1 << act.set_index
    rem = plan.rem_units0 - act.eps_units
    units = act.eps_units
    while mask != plan.full_mask:
        a = table.greedy_action(mask, units, rem)
        if a is None:
            return None
        chosen.append(a)
        act = plan.actions[a]
        mask |= 1 << act.set_index
        rem -= act.eps_units
        units += act.eps_units
    return chosen


def _score_candidate(plan: _Plan, chosen: list[int]) -> StrategyCandidate:
    per_target: dict[Target, float] = {}
    score = 0.0
    requests = []
    units = 0
    for order, a in enumerate(chosen, start=1):
        act = plan.actions[a]
        requests.append(
            DataRequest(division=act.division, epsilon=act.epsilon, order=order)
        )
        units += act.eps_units
        for term in plan.action_terms[a]:
            penalty = term.penalty(act.epsilon)
            per_target[term.target] = penalty
            score += term.weight * penalty
    return StrategyCandidate(
        requests=tuple(requests),
        total_epsilon=units * plan.unit,
        per_target_penalty=per_target,
        score=score,
        budget_bonus=float(plan.bonus_by_units[units]),
        prototype=plan.prototype,
    )


def recommend(
    intent: IntentGraph,
    model: SimulationModel,
    ledger: BudgetLedger,
    k: int = 5,
    config: QConfig = QConfig(),
    progress: float = 1.0,
    on_progress=None,
) -> list[StrategyCandidate]:
    """Train one agent per prototype and return the top-k strategies.

    Candidates come from greedy rollouts seeded with each distinct first
    action, are deduplicated (ignoring order), and sorted by weighted
    penalty, then total budget, then request signature. ``on_progress``,
    when given, is called with a fraction in [0, 1] after each prototype
    and may cancel the run by returning False.
    """
    if not intent.nodes:
        raise NoFeasibleAction("empty exploration intent")
    weights = target_weights(intent)
    prototypes = enumerate_prototypes(intent, config.max_set_size, config.max_prototypes)
    if not prototypes:
        raise NoFeasibleAction("no feasible prototype covers the intent")

    seeds = np.random.SeedSequence(config.seed).spawn(len(prototypes))
    best: dict[tuple, StrategyCandidate] = {}
    for i, prototype in enumerate(prototypes):
        plan = _build_plan(prototype, model, ledger, weights, config, progress)
        table = _train_plan(plan, config, np.random.default_rng(seeds[i]))
        first_actions = plan.legal[0][plan.rem_units0]
        for first in first_actions:
            chosen = _rollout(table, int(first))
            if chosen is None:
                continue
            candidate = _score_candidate(plan, chosen)
            key = (i,) + tuple(
                sorted(
                    (plan.actions[a].set_index, repr(plan.actions[a].division), plan.actions[a].eps_units)
                    for a in chosen
                )
            )
            if key not in best:
                best[key] = candidate
        if on_progress is not None:
            if on_progress((i + 1) / len(prototypes)) is False:
                break

    candidates = sorted(
        best.values(),
        key=lambda c: (
            c.score,
            c.total_epsilon,
            tuple(repr(r.division.to_dict()) for r in c.requests),
        ),
    )
    return candidates[:k]
