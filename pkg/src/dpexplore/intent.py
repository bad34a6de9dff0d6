"""Exploration intent as a graph, and strategy prototypes that cover it.

Nodes are attributes whose distributions the analyst wants; edges are
pairwise correlations of interest. A grid request over an attribute set
reveals every marginal and pairwise joint inside the set, i.e. a complete
graph on it, so a feasible plan corresponds to a family of attribute sets
whose complete graphs jointly cover the intent. Prototypes enumerate the
minimal such covers.

Hub nodes get emphasized through shortest-path betweenness centrality:
an edge's weight is a baseline of 1 plus the average centrality of its
endpoints (a pure product of centralities would zero out triangles and
single edges entirely, erasing the accuracy incentive).
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

from .errors import (
    DuplicateEdge,
    ProgressAboveOne,
    ProgressBelowFloor,
    UnknownAttribute,
)
from .schema import Schema

Edge = tuple[str, str]
AttributeSet = tuple[str, ...]

EDGE_WEIGHT_BASELINE = 1.0


def edge_key(a: str, b: str) -> Edge:
    if a == b:
        raise DuplicateEdge(f"self-loop on {a!r}")
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class IntentGraph:
    """Attributes of interest plus the correlations among them."""

    nodes: tuple[str, ...] = ()
    edges: tuple[Edge, ...] = ()

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise DuplicateEdge("duplicate nodes in intent")
        seen = set()
        for e in self.edges:
            k = edge_key(*e)
            if k != e:
                raise ValueError(f"edge {e} not stored in sorted order")
            if k in seen:
                raise DuplicateEdge(f"duplicate edge {e}")
            if e[0] not in node_set or e[1] not in node_set:
                raise UnknownAttribute(f"edge {e} references a missing node")
            seen.add(k)

    def validate_against(self, schema: Schema) -> None:
        for n in self.nodes:
            schema.get(n)

    def neighbors(self, node: str) -> list[str]:
        out = []
        for a, b in self.edges:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def isolated_nodes(self) -> list[str]:
        touched = {n for e in self.edges for n in e}
        return [n for n in self.nodes if n not in touched]

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d: dict) -> "IntentGraph":
        nodes = tuple(dict.fromkeys(d.get("nodes", [])))
        edges = tuple(sorted({edge_key(a, b) for a, b in d.get("edges", [])}))
        return cls(nodes=nodes, edges=edges)


def edit_intent(graph: IntentGraph, op: str, *names: str, schema: Schema | None = None) -> IntentGraph:
    """Apply one mutation and return the updated graph.

    Ops: add_node/remove_node (one name), add_edge/remove_edge (two names).
    Removing a node removes its incident edges.
    """
    if schema is not None:
        for n in names:
            schema.get(n)
    nodes = list(graph.nodes)
    edges = list(graph.edges)
    if op == "add_node":
        (name,) = names
        if name not in nodes:
            nodes.append(name)
    elif op == "remove_node":
        (name,) = names
        nodes = [n for n in nodes if n != name]
        edges = [e for e in edges if name not in e]
    elif op == "add_edge":
        key = edge_key(*names)
        for n in key:
            if n not in nodes:
                raise UnknownAttribute(f"edge endpoint {n!r} is not an intent node")
        if key in edges:
            raise DuplicateEdge(f"edge {key} already present")
        edges.append(key)
    elif op == "remove_edge":
        key = edge_key(*names)
        edges = [e for e in edges if e != key]
    else:
        raise ValueError(f"unknown intent mutation {op!r}")
    return IntentGraph(nodes=tuple(nodes), edges=tuple(sorted(edges)))


@dataclass(frozen=True)
class ProgressEstimate:
    """Analyst's estimated exploration progress, floored by spent budget.

    The floor is the spent fraction of the total budget and only rises;
    the estimate defaults to 100% (it is always feasible to spend all
    remaining budget on the current intent).
    """

    p: float = 1.0
    floor: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("floor must lie in [0, 1]")
        if self.p < self.floor or self.p > 1.0:
            raise ValueError("estimate must lie in [floor, 1]")


def set_progress(estimate: ProgressEstimate, p: float) -> ProgressEstimate:
    if p > 1.0:
        raise ProgressAboveOne(f"progress estimate {p} exceeds 1")
    if p < estimate.floor:
        raise ProgressBelowFloor(
            f"progress estimate {p} is below the spent-budget floor {estimate.floor}"
        )
    return ProgressEstimate(p=p, floor=estimate.floor)


def raise_floor(estimate: ProgressEstimate, spent_fraction: float) -> ProgressEstimate:
    """Lift the floor after a charge; the estimate never drops below it."""
    floor = max(estimate.floor, min(1.0, spent_fraction))
    return ProgressEstimate(p=max(estimate.p, floor), floor=floor)


def betweenness_centrality(graph: IntentGraph) -> dict[str, float]:
    """Normalized shortest-path betweenness (Brandes' accumulation).

    The divisor is (n-1)(n-2)/2, the number of unordered pairs excluding
    the node itself; graphs with fewer than three nodes score zero.
    """
    nodes = list(graph.nodes)
    n = len(nodes)
    score = {v: 0.0 for v in nodes}
    if n < 3:
        return score
    adjacency = {v: [] for v in nodes}
    for a, b in graph.edges:
        adjacency[a].append(b)
        adjacency[b].append(a)

    for source in nodes:
        stack: list[str] = []
        preds: dict[str, list[str]] = {v: [] for v in nodes}
        sigma = {v: 0.0 for v in nodes}
        sigma[source] = 1.0
        dist = {v: -1 for v in nodes}
        dist[source] = 0
        queue = deque([source])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in adjacency[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = {v: 0.0 for v in nodes}
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != source:
                score[w] += delta[w]

    # Each unordered pair was accumulated from both endpoints.
    divisor = (n - 1) * (n - 2)
    return {v: s / divisor for v, s in score.items()}


def betweenness_weights(
    graph: IntentGraph, baseline: float = EDGE_WEIGHT_BASELINE
) -> tuple[dict[str, float], dict[Edge, float]]:
    """Node centralities and per-edge weights (baseline + mean centrality)."""
    centrality = betweenness_centrality(graph)
    edge_weights = {
        e: baseline + (centrality[e[0]] + centrality[e[1]]) / 2.0 for e in graph.edges
    }
    return centrality, edge_weights


Target = tuple[str, ...]  # (a, b) for an edge, (a,) for an isolated node


def target_weights(
    graph: IntentGraph, baseline: float = EDGE_WEIGHT_BASELINE
) -> dict[Target, float]:
    """Weights for everything the plan must deliver: every intent edge,
    plus a marginal target for each isolated node."""
    centrality, edge_weights = betweenness_weights(graph, baseline)
    weights: dict[Target, float] = {e: w for e, w in edge_weights.items()}
    for node in graph.isolated_nodes():
        weights[(node,)] = baseline + centrality[node]
    return weights


@dataclass(frozen=True)
class Prototype:
    """A minimal family of attribute sets whose complete graphs cover the
    intent, with each target assigned to one deterministic covering set."""

    attribute_sets: tuple[AttributeSet, ...]
    target_assignment: dict[Target, AttributeSet] = field(compare=False, hash=False)

    def to_dict(self) -> dict:
        return {
            "attribute_sets": [list(s) for s in self.attribute_sets],
            "target_assignment": [
                {"target": list(t), "set": list(s)}
                for t, s in sorted(self.target_assignment.items())
            ],
        }


def _requirements(graph: IntentGraph) -> list[frozenset[str]]:
    reqs = [frozenset(e) for e in sorted(graph.edges)]
    reqs.extend(frozenset((n,)) for n in sorted(graph.nodes))
    return reqs


def _candidate_sets(graph: IntentGraph, max_set_size: int) -> list[AttributeSet]:
    nodes = sorted(graph.nodes)
    candidates: list[AttributeSet] = [(n,) for n in nodes]
    for size in range(2, max_set_size + 1):
        candidates.extend(itertools.combinations(nodes, size))
    return candidates


def _is_cover(chosen: tuple[int, ...], requirements, covers_by_req) -> bool:
    chosen_set = set(chosen)
    return all(any(c in chosen_set for c in covers_by_req[i]) for i in range(len(requirements)))


def enumerate_prototypes(
    graph: IntentGraph, max_set_size: int = 3, max_prototypes: int = 64
) -> list[Prototype]:
    """All minimal complete-graph covers of the intent, deterministically
    ordered (fewer sets first, then fewer attributes, then lexicographic),
    truncated at ``max_prototypes``."""
    if max_set_size < 2:
        raise ValueError("max_set_size must be at least 2")
    if not graph.nodes:
        return []
    candidates = _candidate_sets(graph, max_set_size)
    requirements = _requirements(graph)
    covers_by_req = [
        [i for i, cand in enumerate(candidates) if req <= set(cand)]
        for req in requirements
    ]

    found: set[frozenset[int]] = set()
    visited: set[frozenset[int]] = set()

    def extend(chosen: frozenset[int]) -> None:
        if chosen in visited:
            return
        visited.add(chosen)
        for req_covers in covers_by_req:
            if not any(c in chosen for c in req_covers):
                for c in req_covers:
                    extend(chosen | {c})
                return
        found.add(chosen)

    extend(frozenset())

    minimal = []
    for cover in found:
        if all(
            not _is_cover(tuple(cover - {c}), requirements, covers_by_req)
            for c in cover
        ):
            minimal.append(tuple(sorted(candidates[i] for i in cover)))

    minimal = sorted(
        set(minimal), key=lambda sets: (len(sets), sum(len(s) for s in sets), sets)
    )

    prototypes = []
    for sets in minimal[:max_prototypes]:
        assignment: dict[Target, AttributeSet] = {}
        for edge in graph.edges:
            assignment[edge] = next(s for s in sets if set(edge) <= set(s))
        for node in graph.isolated_nodes():
            assignment[(node,)] = next(s for s in sets if node in s)
        prototypes.append(Prototype(attribute_sets=sets, target_assignment=assignment))
    return prototypes
