"""Analyst sessions: state, persistence, and the trust boundary.

A session owns a ledger, an intent graph, a simulation model, the stored
noisy responses and a progress estimate. The raw dataset handle is kept
here only to be passed into the curator's execute path; every payload a
session produces is built exclusively from noisy responses, simulations
and analyst-provided priors.

Two random streams are kept apart: the curator stream that produces real
response noise (seedable only when the test override is active) and the
analyst stream used for simulations and noise-removed instances (always
seedable, persisted with the session so replays continue seamlessly).
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import accuracy, simulate
from .curator import BudgetLedger, DataRequest, NoisyResponse, execute_request, sample_instance
from .errors import DpExploreError, UnknownAttribute
from .intent import IntentGraph, ProgressEstimate, raise_floor, set_progress
from .recommend import QConfig, recommend
from .schema import Dataset, Schema, load_dataset
from .simulate import SimulationModel, build_model, default_marginals, pair_key

# Environment override: lets test builds seed the curator noise stream.
CURATOR_SEED_ENV = "DPEXPLORE_TEST_CURATOR"


@dataclass
class Job:
    """One asynchronous recommendation run."""

    id: str
    status: str = "pending"  # pending | running | done | failed | cancelled
    progress: float = 0.0
    candidates: list[dict] | None = None
    error: str | None = None
    cancel_event: threading.Event = field(default_factory=threading.Event, repr=False)

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "status": self.status, "progress": self.progress}
        if self.candidates is not None:
            d["candidates"] = self.candidates
        if self.error is not None:
            d["error"] = self.error
        return d


def _fresh_rng(seed: int | None) -> np.random.Generator:
    return np.random.default_rng(seed)


def curator_rng(seed: int | None = None) -> np.random.Generator:
    """Curator noise stream. Seeded only when the test override is active."""
    if seed is not None and os.environ.get(CURATOR_SEED_ENV):
        return np.random.default_rng(seed)
    return np.random.default_rng()


class Session:
    """Single analyst exploration session over one dataset."""

    def __init__(
        self,
        session_id: str,
        dataset_name: str,
        dataset: Dataset,
        epsilon_total: float,
        seed: int | None = None,
    ):
        self.id = session_id
        self.dataset_name = dataset_name
        self._dataset = dataset
        self.schema: Schema = dataset.schema
        self.ledger = BudgetLedger(epsilon_total)
        self.intent = IntentGraph()
        self.progress = ProgressEstimate()
        self.responses: list[NoisyResponse] = []
        self.jobs: dict[str, Job] = {}
        self.analyst_rng = _fresh_rng(seed)
        model_seed = int(self.analyst_rng.integers(2**31))
        self.model: SimulationModel = build_model(
            self.schema,
            default_marginals(self.schema, model_seed),
            {},
            n_records=dataset.n_records,
            seed=model_seed,
        )
        # Display provenance of each attribute's marginal estimate.
        self.marginal_sources: dict[str, dict] = {}
        self.lock = threading.RLock()

    # -- intent / priors / progress --------------------------------------

    def replace_intent(self, payload: dict) -> None:
        graph = IntentGraph.from_dict(payload)
        graph.validate_against(self.schema)
        self.intent = graph

    def apply_priors(self, payload: dict) -> None:
        marginals = dict(self.model.marginals)
        claims = dict(self.model.claims)
        for name, values in (payload.get("marginals") or {}).items():
            attr = self.schema.get(name)
            marginals[name] = simulate.validate_marginal(
                name, np.asarray(values, dtype=np.float64), attr.n_bins
            )
            if attr.sensitive:
                # An analyst guess carries no accuracy claim.
                claims.pop(name, None)
                self.marginal_sources[name] = {"source": "prior"}
            else:
                # Public knowledge is exact: nothing noisy ever beats it.
                claims[name] = {"penalty": 0.0, "response_id": None}
                self.marginal_sources[name] = {"source": "public", "ci_half_length": 0.0}
        spearman = dict(self.model.spearman)
        for entry in payload.get("spearman") or []:
            a, b = entry["pair"]
            key = pair_key(a, b)
            spearman[key] = float(entry["value"])
            claims.pop(key, None)
        self.model = build_model(
            self.schema,
            marginals,
            spearman,
            n_records=self.model.n_records,
            seed=self.model.seed,
            claims=claims,
        )

    def apply_progress(self, p: float) -> None:
        self.progress = set_progress(self.progress, float(p))

    # -- request execution and previews -----------------------------------

    def simulate_request(self, request: DataRequest) -> NoisyResponse:
        return simulate.simulate_response(self.model, request, self.analyst_rng)

    def execute(self, request: DataRequest, rng: np.random.Generator) -> NoisyResponse:
        request = DataRequest(
            division=request.division,
            epsilon=request.epsilon,
            order=len(self.responses) + 1,
        )
        response = execute_request(self._dataset, request, self.ledger, rng)
        self.responses.append(response)
        old_claims = self.model.claims
        self.model = simulate.integrate_feedback(self.model, response)
        for attr in request.division.attributes:
            if self.model.claims.get(attr) != old_claims.get(attr):
                m = accuracy.summed_cells(request.division, (attr,))
                self.marginal_sources[attr] = {
                    "source": "requested",
                    "response_id": response.id,
                    "ci_half_length": accuracy.ci_half_length(m, request.epsilon),
                }
        self.progress = raise_floor(self.progress, self.ledger.spent_fraction)
        return response

    def instance(self, response_id: str) -> dict:
        response = self.get_response(response_id)
        values = sample_instance(response, self.analyst_rng)
        return {
            "response_id": response_id,
            "cells": [{"cell": list(c), "value": v} for c, v in sorted(values.items())],
        }

    def get_response(self, response_id: str) -> NoisyResponse:
        for r in self.responses:
            if r.id == response_id:
                return r
        raise KeyError(response_id)

    # -- summaries ---------------------------------------------------------

    def summary(self) -> dict:
        """Per intent edge, the stored result with the smallest 95% CI."""
        edges = []
        for edge in self.intent.edges:
            best = None
            for response in self.responses:
                attrs = response.request.division.attributes
                if edge[0] not in attrs or edge[1] not in attrs:
                    continue
                m = accuracy.summed_cells(response.request.division, edge)
                h = accuracy.ci_half_length(m, response.request.epsilon)
                if best is None or h < best[0]:
                    best = (h, response)
            if best is None:
                edges.append({"edge": list(edge), "covered": False})
                continue
            h, response = best
            values = response.values_array()
            attrs = response.request.division.attributes
            ai, bi = attrs.index(edge[0]), attrs.index(edge[1])
            other = tuple(i for i in range(values.ndim) if i not in (ai, bi))
            table = values.sum(axis=other) if other else values
            if ai > bi:
                table = table.T
            division = response.request.division.restricted_to(edge)
            edges.append(
                {
                    "edge": list(edge),
                    "covered": True,
                    "response_id": response.id,
                    "epsilon": response.request.epsilon,
                    "ci_half_length": h,
                    "division": division.to_dict(),
                    "cells": [
                        {"cell": list(idx), "value": float(table[idx])}
                        for idx in np.ndindex(*table.shape)
                    ],
                }
            )
        return {"edges": edges}

    def node_views(self) -> dict:
        views = {}
        for attr in self.schema:
            source = self.marginal_sources.get(attr.name, {"source": "prior"})
            views[attr.name] = {
                "sensitive": attr.sensitive,
                "marginal": [float(x) for x in self.model.marginals[attr.name]],
                "source": source.get("source", "prior"),
                "ci_half_length": source.get("ci_half_length"),
            }
        return views

    # -- recommendation jobs ------------------------------------------------

    def active_job(self) -> Job | None:
        for job in self.jobs.values():
            if job.status in ("pending", "running"):
                return job
        return None

    # -- persistence ---------------------------------------------------------

    def analyst_view(self) -> dict:
        return {
            "id": self.id,
            "dataset": self.dataset_name,
            "schema": self.schema.to_list(),
            "budget": self.ledger.to_dict(),
            "intent": self.intent.to_dict(),
            "progress": {"p": self.progress.p, "floor": self.progress.floor},
            "model": self.model.to_dict(),
            "nodes": self.node_views(),
            "responses": [
                {
                    "id": r.id,
                    "attributes": list(r.request.division.attributes),
                    "epsilon": r.request.epsilon,
                    "order": r.request.order,
                    "issued_at": r.issued_at,
                }
                for r in self.responses
            ],
            "jobs": {jid: j.to_dict() for jid, j in self.jobs.items()},
        }

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "id": self.id,
            "dataset": self.dataset_name,
            "epsilon_total": self.ledger.epsilon_total,
            "ledger": self.ledger.to_dict(),
            "intent": self.intent.to_dict(),
            "progress": {"p": self.progress.p, "floor": self.progress.floor},
            "model": self.model.to_dict(),
            "marginal_sources": self.marginal_sources,
            "responses": [r.to_dict() for r in self.responses],
            "jobs": {jid: j.to_dict() for jid, j in self.jobs.items()},
            "analyst_rng": _rng_state_to_dict(self.analyst_rng),
        }

    @classmethod
    def from_dict(cls, d: dict, dataset: Dataset) -> "Session":
        session = cls.__new__(cls)
        session.id = d["id"]
        session.dataset_name = d["dataset"]
        session._dataset = dataset
        session.schema = dataset.schema
        session.ledger = BudgetLedger.from_dict(d["ledger"])
        session.intent = IntentGraph.from_dict(d["intent"])
        session.progress = ProgressEstimate(
            p=float(d["progress"]["p"]), floor=float(d["progress"]["floor"])
        )
        session.model = SimulationModel.from_dict(d["model"], dataset.schema)
        session.marginal_sources = dict(d.get("marginal_sources", {}))
        session.responses = [NoisyResponse.from_dict(r) for r in d["responses"]]
        session.jobs = {}
        for jid, jd in d.get("jobs", {}).items():
            job = Job(id=jid, status=jd["status"], progress=jd.get("progress", 0.0))
            job.candidates = jd.get("candidates")
            job.error = jd.get("error")
            if job.status in ("pending", "running"):
                job.status = "failed"
                job.error = "interrupted by restart"
            session.jobs[jid] = job
        session.analyst_rng = _rng_state_from_dict(d["analyst_rng"])
        session.lock = threading.RLock()
        return session


def _rng_state_to_dict(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _rng_state_from_dict(d: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = {
        "bit_generator": d["bit_generator"],
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }
    return rng


class SessionStore:
    """Datasets plus persisted sessions under one directory."""

    def __init__(self, store_dir: str | Path, seed: int | None = None):
        self.store_dir = Path(store_dir)
        self.sessions_dir = self.store_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self._datasets: dict[str, Dataset] = {}
        self.sessions: dict[str, Session] = {}
        self.seed = seed
        self._curator_rng = curator_rng(seed)
        self._lock = threading.Lock()
        self._load_sessions()

    # -- datasets -----------------------------------------------------------

    def dataset_names(self) -> list[str]:
        return sorted(
            p.name
            for p in self.store_dir.iterdir()
            if p.is_dir() and (p / "schema.json").exists()
        )

    def dataset(self, name: str) -> Dataset:
        if name not in self._datasets:
            root = self.store_dir / name
            if not (root / "schema.json").exists():
                raise UnknownAttribute(f"no dataset named {name!r} in store")
            self._datasets[name] = load_dataset(root / "data.csv", root / "schema.json")
        return self._datasets[name]

    def default_dataset_name(self) -> str:
        names = self.dataset_names()
        if len(names) != 1:
            raise UnknownAttribute(
                f"store holds {len(names)} datasets; name one of {names}"
            )
        return names[0]

    # -- sessions -----------------------------------------------------------

    def create_session(
        self, dataset_name: str, epsilon_total: float, seed: int | None = None
    ) -> Session:
        dataset = self.dataset(dataset_name)
        if seed is None and self.seed is not None:
            seed = int(np.random.default_rng(self.seed).integers(2**31))
        session = Session(
            session_id=uuid.uuid4().hex[:12],
            dataset_name=dataset_name,
            dataset=dataset,
            epsilon_total=epsilon_total,
            seed=seed,
        )
        with self._lock:
            self.sessions[session.id] = session
        self.save(session)
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise KeyError(session_id) from None

    def save(self, session: Session) -> None:
        path = self.sessions_dir / f"{session.id}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(session.to_dict()))
        tmp.replace(path)

    def _load_sessions(self) -> None:
        for path in sorted(self.sessions_dir.glob("*.json")):
            try:
                data = json.loads(path.read_text())
                dataset = self.dataset(data["dataset"])
                session = Session.from_dict(data, dataset)
                self.sessions[session.id] = session
            except (DpExploreError, KeyError, json.JSONDecodeError):
                continue

    # -- curator ---------------------------------------------------------------

    def execute(self, session: Session, request: DataRequest) -> NoisyResponse:
        response = session.execute(request, self._curator_rng)
        self.save(session)
        return response

    # -- jobs --------------------------------------------------------------------

    def start_recommend_job(
        self, session: Session, k: int, config: QConfig | None = None
    ) -> Job:
        job = Job(id=uuid.uuid4().hex[:12])
        session.jobs[job.id] = job
        if config is None:
            seed = self.seed if self.seed is not None else 0
            config = QConfig(seed=seed)

        def run() -> None:
            job.status = "running"
            try:
                def on_progress(fraction: float) -> bool:
                    job.progress = fraction
                    return not job.cancel_event.is_set()

                candidates = recommend(
                    session.intent,
                    session.model,
                    session.ledger,
                    k=k,
                    config=config,
                    progress=session.progress.p,
                    on_progress=on_progress,
                )
                if job.cancel_event.is_set():
                    job.status = "cancelled"
                else:
                    job.candidates = [c.to_dict() for c in candidates]
                    job.progress = 1.0
                    job.status = "done"
            except DpExploreError as exc:
                job.status = "failed"
                job.error = str(exc)
            except Exception as exc:  # noqa: BLE001 - job boundary
                job.status = "failed"
                job.error = f"internal error: {exc}"
            self.save(session)

        thread = threading.Thread(target=run, daemon=True)
        thread.start()
        return job
