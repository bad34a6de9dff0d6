"""Headless driver: ingest data, serve the API, and run scripted flows.

Exit codes mirror the API's error mapping: 2 for validation problems,
3 for budget exhaustion, 4 for I/O and file-format problems.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import accuracy
from .curator import DataRequest
from .errors import BudgetExceeded, DpExploreError, MalformedFile
from .recommend import QConfig, recommend
from .schema import load_dataset
from .session import CURATOR_SEED_ENV, Session, curator_rng
from .simulate import simulate_response

EXIT_VALIDATION = 2
EXIT_BUDGET = 3
EXIT_IO = 4


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(func):
    """Translate engine errors into the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except BudgetExceeded as exc:
            _fail(EXIT_BUDGET, str(exc))
        except (MalformedFile, FileNotFoundError, OSError) as exc:
            _fail(EXIT_IO, str(exc))
        except (DpExploreError, ValueError, KeyError) as exc:
            _fail(EXIT_VALIDATION, str(exc))

    wrapper.__name__ = func.__name__
    wrapper.__doc__ = func.__doc__
    return wrapper


@click.group()
def main() -> None:
    """Budget-aware differentially private data exploration."""


@main.command()
@click.option("--data", "data_file", required=True, type=click.Path())
@click.option("--schema", "schema_file", required=True, type=click.Path())
@click.option("--out", "store_dir", required=True, type=click.Path())
@click.option("--name", default=None, help="Dataset name inside the store.")
@_guard
def ingest(data_file: str, schema_file: str, store_dir: str, name: str | None) -> None:
    """Validate a CSV table against its schema and add it to a store."""
    dataset = load_dataset(data_file, schema_file)
    name = name or Path(data_file).stem
    root = Path(store_dir) / name
    root.mkdir(parents=True, exist_ok=True)
    root.joinpath("schema.json").write_text(json.dumps(dataset.schema.to_list(), indent=2))
    root.joinpath("data.csv").write_bytes(Path(data_file).read_bytes())
    click.echo(f"ingested {dataset.n_records} records as {name!r} in {store_dir}")


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--port", default=8000, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--seed", default=None, type=int, help="Analyst stream seed.")
@_guard
def serve(store_dir: str, port: int, host: str, seed: int | None) -> None:
    """Run the session API (and the web UI, if built) over a store."""
    import uvicorn

    from .service import create_app

    app = create_app(store_dir, seed=seed)
    ui_dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dist.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dist, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)


def _load_session_file(session_file: str) -> tuple[Session, dict]:
    path = Path(session_file)
    if not path.exists():
        raise MalformedFile(f"session file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"session file is not valid JSON: {exc}") from None
    store = Path(data["store"])
    root = store / data["dataset"]
    dataset = load_dataset(root / "data.csv", root / "schema.json")
    return Session.from_dict(data, dataset), data


def _save_session_file(session: Session, data: dict, session_file: str) -> None:
    out = session.to_dict()
    out["store"] = data["store"]
    path = Path(session_file)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(out))
    tmp.replace(path)


def _load_request(request_arg: str) -> DataRequest:
    path = Path(request_arg)
    text = path.read_text() if path.exists() else request_arg
    try:
        return DataRequest.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"request is not valid JSON: {exc}") from None


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--dataset", required=True)
@click.option("--epsilon-total", required=True, type=float)
@click.option("--session", "session_file", required=True, type=click.Path())
@click.option("--seed", default=None, type=int)
@click.option("--intent", "intent_file", default=None, type=click.Path())
@click.option("--priors", "priors_file", default=None, type=click.Path())
@_guard
def init(
    store_dir: str,
    dataset: str,
    epsilon_total: float,
    session_file: str,
    seed: int | None,
    intent_file: str | None,
    priors_file: str | None,
) -> None:
    """Create a session file over a stored dataset."""
    root = Path(store_dir) / dataset
    ds = load_dataset(root / "data.csv", root / "schema.json")
    session = Session(
        session_id=Path(session_file).stem,
        dataset_name=dataset,
        dataset=ds,
        epsilon_total=epsilon_total,
        seed=seed,
    )
    if intent_file:
        session.replace_intent(json.loads(Path(intent_file).read_text()))
    if priors_file:
        session.apply_priors(json.loads(Path(priors_file).read_text()))
    _save_session_file(session, {"store": str(store_dir)}, session_file)
    click.echo(f"session {session.id} over {dataset!r} with budget {epsilon_total}")


@main.command()
@click.option("--session", "session_file", required=True, type=click.Path())
@click.option("--k", default=5, type=int)
@click.option("--seed", default=0, type=int)
@_guard
def plan(session_file: str, k: int, seed: int) -> None:
    """Print the top-k recommended strategies for the session's intent."""
    session, _ = _load_session_file(session_file)
    candidates = recommend(
        session.intent,
        session.model,
        session.ledger,
        k=k,
        config=QConfig(seed=seed),
        progress=session.progress.p,
    )
    for rank, cand in enumerate(candidates, start=1):
        click.echo(
            f"#{rank} score={cand.score:.6f} total_epsilon={cand.total_epsilon:.4f} "
            f"budget_bonus={cand.budget_bonus:.4f}"
        )
        for req in cand.requests:
            attrs = ",".join(req.division.attributes)
            sizes = "x".join(str(s) for s in req.division.shape)
            click.echo(
                f"  order={req.order} attributes=[{attrs}] cells={sizes} "
                f"epsilon={req.epsilon:.4f}"
            )


@main.command()
@click.option("--session", "session_file", required=True, type=click.Path())
@click.option("--request", "request_arg", required=True)
@_guard
def simulate(session_file: str, request_arg: str) -> None:
    """Preview a request on simulated data (no budget is spent)."""
    session, data = _load_session_file(session_file)
    request = _load_request(request_arg)
    response = simulate_response(session.model, request, session.analyst_rng)
    half = accuracy.ci_half_length(1, request.epsilon)
    click.echo(f"simulated request over {list(request.division.attributes)} "
               f"epsilon={request.epsilon} ci_half_length={half:.4f}")
    for cell, value in sorted(response.cell_counts.items()):
        click.echo(f"  cell={list(cell)} value={value:.3f} ± {half:.3f}")
    _save_session_file(session, data, session_file)


@main.command()
@click.option("--session", "session_file", required=True, type=click.Path())
@click.option("--request", "request_arg", required=True)
@click.option("--seed", default=None, type=int,
              help=f"Curator noise seed (honored only with {CURATOR_SEED_ENV}=1).")
@_guard
def execute(session_file: str, request_arg: str, seed: int | None) -> None:
    """Submit a real request: charge the budget, print the noisy cells."""
    session, data = _load_session_file(session_file)
    request = _load_request(request_arg)
    rng = curator_rng(seed)
    response = session.execute(request, rng)
    _save_session_file(session, data, session_file)
    click.echo(
        f"response {response.id} epsilon={request.epsilon} "
        f"remaining={session.ledger.epsilon_remain:.6f}"
    )
    for cell, value in sorted(response.cell_counts.items()):
        click.echo(f"  cell={list(cell)} value={value:.3f}")


@main.command()
@click.option("--session", "session_file", required=True, type=click.Path())
@click.option("--csv", "as_csv", is_flag=True, help="Emit the summary as CSV.")
@_guard
def report(session_file: str, as_csv: bool) -> None:
    """Print the budget ledger and the per-edge summary matrix."""
    session, _ = _load_session_file(session_file)
    ledger = session.ledger
    click.echo(
        f"budget: total={ledger.epsilon_total} spent={ledger.epsilon_spent:.6f} "
        f"remaining={ledger.epsilon_remain:.6f}"
    )
    for request_id, eps in ledger.entries:
        click.echo(f"  entry {request_id} epsilon={eps}")
    summary = session.summary()
    if as_csv:
        click.echo("edge_a,edge_b,covered,response_id,epsilon,ci_half_length")
        for entry in summary["edges"]:
            a, b = entry["edge"]
            if entry["covered"]:
                click.echo(
                    f"{a},{b},yes,{entry['response_id']},{entry['epsilon']},"
                    f"{entry['ci_half_length']:.6f}"
                )
            else:
                click.echo(f"{a},{b},no,,,")
        return
    click.echo("summary:")
    for entry in summary["edges"]:
        a, b = entry["edge"]
        if entry["covered"]:
            click.echo(
                f"  {a}/{b}: response {entry['response_id']} epsilon={entry['epsilon']} "
                f"ci_half_length={entry['ci_half_length']:.4f}"
            )
        else:
            click.echo(f"  {a}/{b}: (not requested yet)")


@main.command("demo-store")
@click.option("--out", "store_dir", required=True, type=click.Path())
@_guard
def demo_store(store_dir: str) -> None:
    """Write the bundled demo datasets into a store directory."""
    from .demo import write_demo_store

    write_demo_store(store_dir)
    click.echo(f"demo datasets written to {store_dir}")


if __name__ == "__main__":
    main()
