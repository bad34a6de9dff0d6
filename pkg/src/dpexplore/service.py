"""HTTP/JSON API over analyst sessions.

Status mapping is fixed so clients in any language behave identically:
400 for validation problems, 402 when a charge would exceed the remaining
budget, 409 for progress estimates below the spent floor (and for
starting a second concurrent recommendation job), 404 for unknown ids.
All field names are snake_case; reals are serialized unrounded.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import Body, FastAPI, HTTPException

from .curator import DataRequest
from .errors import (
    BudgetExceeded,
    DpExploreError,
    ProgressAboveOne,
    ProgressBelowFloor,
)
from .session import Job, Session, SessionStore


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, BudgetExceeded):
        return HTTPException(status_code=402, detail=str(exc))
    if isinstance(exc, ProgressBelowFloor):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, (ProgressAboveOne, DpExploreError, ValueError, KeyError, TypeError)):
        return HTTPException(status_code=400, detail=str(exc))
    raise exc


def create_app(store_dir: str | Path, seed: int | None = None) -> FastAPI:
    store = SessionStore(store_dir, seed=seed)
    app = FastAPI(title="dpexplore", version="0.1.0")
    app.state.store = store

    def get_session(session_id: str) -> Session:
        try:
            return store.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no session {session_id}") from None

    @app.get("/schema")
    def schema(dataset: str | None = None) -> list[dict]:
        try:
            name = dataset or store.default_dataset_name()
            return store.dataset(name).schema.to_list()
        except DpExploreError as exc:
            raise _http_error(exc) from None

    @app.get("/datasets")
    def datasets() -> list[str]:
        return store.dataset_names()

    @app.post("/sessions", status_code=201)
    def create_session(payload: dict = Body(...)) -> dict:
        try:
            session = store.create_session(
                dataset_name=payload.get("dataset") or store.default_dataset_name(),
                epsilon_total=float(payload["epsilon_total"]),
                seed=payload.get("seed"),
            )
        except (DpExploreError, KeyError, TypeError, ValueError) as exc:
            raise _http_error(exc) from None
        return {"id": session.id}

    @app.get("/sessions/{session_id}")
    def get_session_state(session_id: str) -> dict:
        return get_session(session_id).analyst_view()

    @app.put("/sessions/{session_id}/intent")
    def put_intent(session_id: str, payload: dict = Body(...)) -> dict:
        session = get_session(session_id)
        with session.lock:
            try:
                session.replace_intent(payload)
            except (DpExploreError, ValueError, KeyError, TypeError) as exc:
                raise _http_error(exc) from None
            store.save(session)
            return session.intent.to_dict()

    @app.put("/sessions/{session_id}/priors")
    def put_priors(session_id: str, payload: dict = Body(...)) -> dict:
        session = get_session(session_id)
        with session.lock:
            try:
                session.apply_priors(payload)
            except (DpExploreError, ValueError, KeyError, TypeError) as exc:
                raise _http_error(exc) from None
            store.save(session)
            return session.model.to_dict()

    @app.put("/sessions/{session_id}/progress")
    def put_progress(session_id: str, payload: dict = Body(...)) -> dict:
        session = get_session(session_id)
        with session.lock:
            try:
                session.apply_progress(payload["p"])
            except (DpExploreError, ValueError, KeyError, TypeError) as exc:
                raise _http_error(exc) from None
            store.save(session)
            return {"p": session.progress.p, "floor": session.progress.floor}

    @app.post("/sessions/{session_id}/recommend", status_code=202)
    def post_recommend(session_id: str, payload: dict = Body(default={})) -> dict:
        session = get_session(session_id)
        with session.lock:
            if session.active_job() is not None:
                raise HTTPException(
                    status_code=409, detail="a recommendation job is already running"
                )
            k = int(payload.get("k", 5))
            job = store.start_recommend_job(session, k)
            return {"job_id": job.id}

    @app.get("/sessions/{session_id}/jobs/{job_id}")
    def get_job(session_id: str, job_id: str) -> dict:
        session = get_session(session_id)
        job = session.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job.to_dict()

    @app.delete("/sessions/{session_id}/jobs/{job_id}")
    def cancel_job(session_id: str, job_id: str) -> dict:
        session = get_session(session_id)
        job = session.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        job.cancel_event.set()
        return job.to_dict()

    @app.post("/sessions/{session_id}/simulate")
    def post_simulate(session_id: str, payload: dict = Body(...)) -> dict:
        session = get_session(session_id)
        with session.lock:
            try:
                request = DataRequest.from_dict(payload.get("request", payload))
                response = session.simulate_request(request)
            except (DpExploreError, ValueError, KeyError, TypeError) as exc:
                raise _http_error(exc) from None
            store.save(session)  # analyst stream advanced
            return response.to_dict()

    @app.post("/sessions/{session_id}/requests", status_code=201)
    def post_request(session_id: str, payload: dict = Body(...)) -> dict:
        session = get_session(session_id)
        with session.lock:
            try:
                request = DataRequest.from_dict(payload.get("request", payload))
                response = store.execute(session, request)
            except (DpExploreError, ValueError, KeyError, TypeError) as exc:
                raise _http_error(exc) from None
            return response.to_dict()

    @app.get("/sessions/{session_id}/responses")
    def list_responses(session_id: str) -> list[dict]:
        return [r.to_dict() for r in get_session(session_id).responses]

    @app.get("/sessions/{session_id}/responses/{response_id}")
    def get_response(session_id: str, response_id: str) -> dict:
        try:
            return get_session(session_id).get_response(response_id).to_dict()
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no response {response_id}") from None

    @app.post("/sessions/{session_id}/responses/{response_id}/instance")
    def post_instance(session_id: str, response_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            try:
                result = session.instance(response_id)
            except KeyError:
                raise HTTPException(
                    status_code=404, detail=f"no response {response_id}"
                ) from None
            store.save(session)
            return result

    @app.get("/sessions/{session_id}/summary")
    def get_summary(session_id: str) -> dict:
        return get_session(session_id).summary()

    @app.get("/sessions/{session_id}/budget")
    def get_budget(session_id: str) -> dict:
        return get_session(session_id).ledger.to_dict()

    return app


__all__ = ["create_app", "Job", "Session", "SessionStore"]
