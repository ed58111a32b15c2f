"""Command-line client for the clausecheck service.

Every command talks to the HTTP API. By default the service runs in-process
(no server needed); pass --server to point at a running instance instead.
File paths referenced in config files (such as a mock script) are resolved
client-side, so remote servers must see the same filesystem for those.
"""

from __future__ import annotations

import asyncio
import sys
from pathlib import Path

import click

from . import __version__
from .config import parse_flat
from .reporting import dumps_canonical

EXIT_OK = 0
EXIT_NOTHING_INGESTED = 1
EXIT_BAD_INPUT = 2
EXIT_PROVIDER_UNAVAILABLE = 3


class ApiClient:
    """Single-call HTTP client; in-process ASGI unless a server is given."""

    def __init__(self, server: str | None):
        self._server = server
        self._app = None

    async def _request(self, method: str, path: str, payload: dict | None):
        import httpx

        if self._server:
            async with httpx.AsyncClient(
                base_url=self._server, timeout=600.0
            ) as client:
                response = await client.request(method, path, json=payload)
                return response.status_code, response.json()
        if self._app is None:
            from .service.app import create_app

            self._app = create_app()
        transport = httpx.ASGITransport(app=self._app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://clausecheck.internal", timeout=600.0
        ) as client:
            response = await client.request(method, path, json=payload)
            return response.status_code, response.json()

    def call(self, method: str, path: str, payload: dict | None = None):
        return asyncio.run(self._request(method, path, payload))


def _fail_http(ctx: click.Context, status: int, body: dict, exit_code: int) -> None:
    detail = body.get("detail", body)
    if isinstance(detail, dict):
        message = detail.get("message", str(detail))
        code = detail.get("code", "")
        for item in detail.get("details", []):
            click.echo(f"  {item}", err=True)
    else:
        message, code = str(detail), ""
    click.echo(f"error ({status}{' ' + code if code else ''}): {message}", err=True)
    ctx.exit(exit_code)


def _read_text(ctx: click.Context, path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        click.echo(f"cannot read {path}: {exc}", err=True)
        ctx.exit(EXIT_BAD_INPUT)


def _load_config(ctx: click.Context, config_path: str | None) -> dict[str, str]:
    if not config_path:
        return {}
    try:
        values = parse_flat(_read_text(ctx, config_path))
    except ValueError as exc:
        click.echo(f"bad config file: {exc}", err=True)
        ctx.exit(EXIT_BAD_INPUT)
    script = values.get("llm.mock_script")
    if script:
        values["llm.mock_script"] = str(
            (Path(config_path).parent / script).resolve()
            if not Path(script).is_absolute()
            else Path(script)
        )
    return values


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Base URL of a running service (default: in-process).")
@click.version_option(version=__version__, prog_name="clausecheck")
@click.pass_context
def main(ctx, server):
    """Contract clause risk identification."""
    ctx.obj = ApiClient(server)


# -- chunking ----------------------------------------------------------------


@main.command()
@click.argument("contract_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--max-chars", default=4000, show_default=True,
              help="Upper bound on chunk size in characters.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the clause CSV here instead of stdout.")
@click.pass_context
def chunk(ctx, contract_file, max_chars, out):
    """Segment a plain-text contract into a Clause_type,Clauses CSV."""
    client: ApiClient = ctx.obj
    status, body = client.call(
        "POST",
        "/chunk",
        {
            "text": _read_text(ctx, contract_file),
            "max_chunk_chars": max_chars,
            "source_doc": Path(contract_file).name,
        },
    )
    if status != 200:
        _fail_http(ctx, status, body, EXIT_BAD_INPUT)
    for warning in body["warnings"]:
        click.echo(f"warning: {warning}", err=True)
    if out:
        Path(out).write_text(body["csv_text"], encoding="utf-8")
        click.echo(f"{len(body['chunks'])} chunks -> {out}", err=True)
    else:
        click.echo(body["csv_text"], nl=False)


# -- knowledge base ------------------------------------------------------------


@main.group()
def kb():
    """Build and extend knowledge bases."""


@kb.command("ingest")
@click.argument("csv_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--kb", "kb_path", required=True, type=click.Path(),
              help="Knowledge base directory (created on first ingest).")
@click.option("--kind", type=click.Choice(["project", "expert"]), required=True,
              help="project: Clause_type,Clauses; expert: Checkpoints,Clauses,Reviews.")
@click.option("--collection", default=None,
              help="Custom collection name (defaults to the kind's collection).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Flat key=value config (embedding provider, metric, index).")
@click.pass_context
def kb_ingest(ctx, csv_file, kb_path, kind, collection, config_path):
    """Embed and persist the rows of a clause or expert-pair CSV."""
    client: ApiClient = ctx.obj
    status, body = client.call(
        "POST",
        "/kb/ingest",
        {
            "kb_path": kb_path,
            "kind": kind,
            "csv_text": _read_text(ctx, csv_file),
            "source_name": Path(csv_file).name,
            "collection": collection,
            "config": _load_config(ctx, config_path),
        },
    )
    if status != 200:
        _fail_http(ctx, status, body, EXIT_BAD_INPUT)
    for item in body["skipped"]:
        click.echo(f"skipped row {item['row']}: {item['reason']}", err=True)
    for warning in body["warnings"]:
        click.echo(f"warning: {warning}", err=True)
    click.echo(f"{body['ingested']} ingested into {body['collection']}")
    if body["ingested"] == 0 and body["total_rows"] > 0:
        ctx.exit(EXIT_NOTHING_INGESTED)


@kb.command("add")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, help="Checkpoint text this pair answers.")
@click.option("--clause-file", required=True, type=click.Path(exists=True),
              help="File holding the past risky clause text.")
@click.option("--review-file", required=True, type=click.Path(exists=True),
              help="File holding the expert review text.")
@click.pass_context
def kb_add(ctx, kb_path, checkpoint, clause_file, review_file):
    """Append one clause-review pair to the expert collection."""
    client: ApiClient = ctx.obj
    status, body = client.call(
        "POST",
        "/kb/expert-pairs",
        {
            "kb_path": kb_path,
            "checkpoint": checkpoint,
            "clause_text": _read_text(ctx, clause_file),
            "review_text": _read_text(ctx, review_file),
        },
    )
    if status != 200:
        _fail_http(ctx, status, body, EXIT_BAD_INPUT)
    click.echo(f"added expert pair {body['id']}")


# -- index ---------------------------------------------------------------------


@main.group()
def index():
    """Vector index maintenance."""


@index.command("build")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--collection", "collections", multiple=True,
              help="Collections to index (default: all).")
@click.option("--max-degree", type=int, default=None)
@click.option("--ef-search", type=int, default=None)
@click.option("--ef-construction", type=int, default=None)
@click.option("--seed", type=int, default=None,
              help="Fix the index level generator for reproducible builds.")
@click.pass_context
def index_build(ctx, kb_path, collections, max_degree, ef_search,
                ef_construction, seed):
    """Rebuild graph indexes from the record logs and self-check recall."""
    client: ApiClient = ctx.obj
    status, body = client.call(
        "POST",
        "/kb/index",
        {
            "kb_path": kb_path,
            "collections": list(collections) or None,
            "max_degree": max_degree,
            "ef_search": ef_search,
            "ef_construction": ef_construction,
            "seed": seed,
        },
    )
    if status != 200:
        _fail_http(ctx, status, body, EXIT_BAD_INPUT)
    for check in body["checks"]:
        click.echo(
            f"{check['collection']}: {check['records']} records indexed, "
            f"recall@5 {check['recall_at_5']:.4f} "
            f"over {check['sampled_queries']} sampled queries"
        )


# -- identification --------------------------------------------------------------


@main.command()
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoints", "checkpoints_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV with a Checkpoints column, or one checkpoint per line.")
@click.option("--mode", type=click.Choice(["augmented", "standard", "both"]),
              default="both", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Flat key=value config (llm provider, sampling, retrieval).")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON report here (default: stdout).")
@click.option("--format", "fmt", type=click.Choice(["json", "markdown"]),
              default="json", show_default=True)
@click.option("--seed", type=int, default=None,
              help="Recorded in run metadata; fixes seeded components.")
@click.option("--qa-samples", type=int, default=None,
              help="Override sampling.qa_samples from the config.")
@click.option("--vote-samples", type=int, default=None,
              help="Override sampling.vote_samples from the config.")
@click.option("--temperature", type=float, default=None,
              help="Override sampling.temperature from the config.")
@click.pass_context
def identify(ctx, kb_path, checkpoints_file, mode, config_path, out, fmt, seed,
             qa_samples, vote_samples, temperature):
    """Run risk identification for every checkpoint in a checklist.

    Finding risks is a result, not a failure: the exit status is 0 even
    when clauses are flagged. Exit status 3 means the language model
    provider was unavailable.
    """
    client: ApiClient = ctx.obj
    config = _load_config(ctx, config_path)
    if qa_samples is not None:
        config["sampling.qa_samples"] = str(qa_samples)
    if vote_samples is not None:
        config["sampling.vote_samples"] = str(vote_samples)
    if temperature is not None:
        config["sampling.temperature"] = str(temperature)
    status, body = client.call(
        "POST",
        "/identify",
        {
            "kb_path": kb_path,
            "mode": mode,
            "checkpoints_csv": _read_text(ctx, checkpoints_file),
            "config": config,
            "seed": seed,
            "include_markdown": fmt == "markdown",
        },
    )
    if status != 200:
        _fail_http(ctx, status, body, EXIT_BAD_INPUT)
    report = body["report"]
    rendered = body["markdown"] if fmt == "markdown" else dumps_canonical(report)
    if out:
        Path(out).write_text(rendered, encoding="utf-8")
        click.echo(f"report -> {out}", err=True)
    else:
        click.echo(rendered, nl=False)

    summary = report["summary"]
    click.echo(
        f"{summary['results']} results: {summary['risky']} risky, "
        f"{summary['non_risky']} non-risky, {summary['failed']} failed",
        err=True,
    )
    if any(
        entry.get("error_kind") == "provider_unavailable"
        for entry in report["results"]
    ):
        ctx.exit(EXIT_PROVIDER_UNAVAILABLE)


# -- search (operator convenience) ----------------------------------------------


@main.command()
@click.argument("query")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True))
@click.option("--collection", default="project_clauses", show_default=True)
@click.option("--k", default=5, show_default=True)
@click.option("--checkpoint-filter", default=None,
              help="Restrict expert pairs to an exact checkpoint match.")
@click.pass_context
def search(ctx, query, kb_path, collection, k, checkpoint_filter):
    """Vector search against one collection."""
    client: ApiClient = ctx.obj
    status, body = client.call(
        "POST",
        "/kb/search",
        {
            "kb_path": kb_path,
            "collection": collection,
            "query_text": query,
            "k": k,
            "checkpoint_filter": checkpoint_filter,
        },
    )
    if status != 200:
        _fail_http(ctx, status, body, EXIT_BAD_INPUT)
    if body["exact_fallback"]:
        click.echo("note: no index available, served by exact search", err=True)
    for hit in body["hits"]:
        label = hit["payload"].get("clause_type") or hit["payload"].get(
            "checkpoint_text", ""
        )
        click.echo(
            f"[{hit['id']}] score {hit['score']:.4f} "
            f"distance {hit['distance']:.4f} {label}"
        )


# -- service ---------------------------------------------------------------------


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8764, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main(sys.argv[1:])
