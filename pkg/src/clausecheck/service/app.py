"""FastAPI service wrapping the core package.

The service is stateless across requests: every call names the knowledge
base directory it operates on, which is opened for the duration of the
request. Ingestion creates the knowledge base on first use; its embedding
provider is fixed in the manifest at creation time so stored vectors and
query vectors always come from the same embedder.
"""

from __future__ import annotations

import csv
import io

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..chunker import ChunkerConfig, segment
from ..config import Settings
from ..embedding import EmbeddingProviderConfig, build_embedder
from ..hnsw import HnswParams
from ..llm import build_provider
from ..models import Checkpoint, EmbeddingVector
from ..pipeline import Pipeline, PipelineConfig
from ..reporting import build_report, to_markdown
from ..store import (
    EXPERT_COLLECTION,
    KIND_EXPERT,
    KIND_PROJECT,
    KnowledgeBase,
    PROJECT_COLLECTION,
    SchemaMismatchError,
    StoreError,
    add_expert_pair,
    ingest_csv,
)
from . import schemas


def _error(status: int, code: str, message: str, details: list[dict] | None = None):
    return HTTPException(
        status_code=status,
        detail={"code": code, "message": message, "details": details or []},
    )


def _open_kb(kb_path: str) -> KnowledgeBase:
    try:
        return KnowledgeBase.open(kb_path)
    except StoreError as exc:
        raise _error(404, "KB_NOT_FOUND", str(exc)) from exc


def _kb_embedder(kb: KnowledgeBase):
    return build_embedder(EmbeddingProviderConfig.from_record(kb.embedding))


def parse_checkpoints_csv(text: str) -> list[Checkpoint]:
    """Accept a CSV with a Checkpoints column (ID and Topic optional) or a
    plain text file with one checkpoint per line."""
    reader = csv.DictReader(io.StringIO(text))
    header = [h.strip() for h in (reader.fieldnames or [])]
    checkpoints: list[Checkpoint] = []
    if "Checkpoints" in header:
        rows = [
            {k.strip(): (v or "").strip() for k, v in row.items() if k}
            for row in reader
        ]
        width = max(3, len(str(len(rows))))
        for i, row in enumerate(rows, start=1):
            if not row.get("Checkpoints"):
                continue
            checkpoints.append(
                Checkpoint(
                    id=row.get("ID") or f"cp-{i:0{width}d}",
                    text=row["Checkpoints"],
                    topic=row.get("Topic") or None,
                )
            )
    else:
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        width = max(3, len(str(len(lines))))
        for i, line in enumerate(lines, start=1):
            checkpoints.append(Checkpoint(id=f"cp-{i:0{width}d}", text=line))
    return checkpoints


def create_app() -> FastAPI:
    app = FastAPI(
        title="clausecheck",
        version=__version__,
        description="Contract clause risk identification service",
    )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/chunk", response_model=schemas.ChunkResponse)
    def chunk(request: schemas.ChunkRequest):
        try:
            config = ChunkerConfig(max_chunk_chars=request.max_chunk_chars)
        except ValueError as exc:
            raise _error(422, "BAD_CHUNK_CONFIG", str(exc)) from exc
        result = segment(request.text, config, source_doc=request.source_doc)
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["Clause_type", "Clauses"])
        for chunk_ in result.chunks:
            writer.writerow([chunk_.clause_type, chunk_.text])
        return {
            "chunks": [c.to_record() for c in result.chunks],
            "warnings": result.warnings,
            "csv_text": buffer.getvalue(),
        }

    @app.post("/kb/ingest", response_model=schemas.IngestResponse)
    def kb_ingest(request: schemas.IngestRequest):
        settings = Settings(values=request.config)
        created = False
        try:
            kb = KnowledgeBase.open(request.kb_path)
        except StoreError:
            if not request.create_if_missing:
                raise _error(404, "KB_NOT_FOUND", f"no knowledge base at {request.kb_path}")
            embedding_config = settings.embedding_config()
            kb = KnowledgeBase.create(
                request.kb_path,
                dim=embedding_config.dim,
                metric=settings.retrieval_config().metric,
                hnsw_params=settings.hnsw_params(),
                embedding=embedding_config.to_record(),
                embed_headings=settings.embed_headings(),
            )
            created = True
        try:
            kind = KIND_PROJECT if request.kind == "project" else KIND_EXPERT
            name = request.collection or (
                PROJECT_COLLECTION if kind == KIND_PROJECT else EXPERT_COLLECTION
            )
            try:
                collection = kb.collection(name)
            except StoreError:
                collection = kb.create_collection(name, kind)
            if collection.kind != kind:
                raise _error(
                    422,
                    "KIND_MISMATCH",
                    f"collection {name!r} stores {collection.kind}, not {kind}",
                )
            embedder = _kb_embedder(kb)
            try:
                report = ingest_csv(
                    collection,
                    request.csv_text,
                    embedder,
                    source=request.source_name,
                    embed_headings=kb.embed_headings,
                )
            except SchemaMismatchError as exc:
                raise _error(
                    422,
                    "SCHEMA_MISMATCH",
                    str(exc),
                    details=[{"missing_column": col} for col in exc.missing],
                ) from exc
            body = report.to_dict()
            body["kb_created"] = created
            return body
        finally:
            kb.close()

    @app.post("/kb/expert-pairs", response_model=schemas.AddPairResponse)
    def kb_add_pair(request: schemas.AddPairRequest):
        kb = _open_kb(request.kb_path)
        try:
            embedder = _kb_embedder(kb)
            try:
                pair_id = add_expert_pair(
                    kb.expert,
                    checkpoint_text=request.checkpoint,
                    clause_text=request.clause_text,
                    review_text=request.review_text,
                    embedder=embedder,
                )
            except StoreError as exc:
                raise _error(422, "BAD_PAIR", str(exc)) from exc
            return {"id": pair_id}
        finally:
            kb.close()

    @app.post("/kb/index", response_model=schemas.BuildIndexResponse)
    def kb_index(request: schemas.BuildIndexRequest):
        kb = _open_kb(request.kb_path)
        try:
            base = kb.hnsw_params
            params = HnswParams(
                max_degree=request.max_degree or base.max_degree,
                ef_search=request.ef_search or base.ef_search,
                ef_construction=request.ef_construction or base.ef_construction,
                level_multiplier=base.level_multiplier,
            )
            names = request.collections or kb.collection_names()
            checks = []
            for name in names:
                collection = kb.collection(name)
                collection.build_index(params, seed=request.seed)
                checks.append(_recall_self_check(collection))
            return {"checks": checks}
        except StoreError as exc:
            raise _error(422, "BAD_INDEX_REQUEST", str(exc)) from exc
        finally:
            kb.close()

    @app.post("/kb/search", response_model=schemas.SearchResponse)
    def kb_search(request: schemas.SearchRequest):
        kb = _open_kb(request.kb_path)
        try:
            try:
                collection = kb.collection(request.collection)
            except StoreError as exc:
                raise _error(404, "COLLECTION_NOT_FOUND", str(exc)) from exc
            embedder = _kb_embedder(kb)
            query = embedder.embed_text(request.query_text)
            allowed = None
            if request.checkpoint_filter is not None:
                try:
                    allowed = collection.filter_by_checkpoint(request.checkpoint_filter)
                except StoreError as exc:
                    raise _error(422, "BAD_FILTER", str(exc)) from exc
                if not allowed:
                    return {"hits": [], "used_index": False, "exact_fallback": False}
            if request.use_index:
                result = collection.search_ann(query, request.k, allowed_ids=allowed)
                hits, used_index = result.hits, result.used_index
                exact_fallback = result.exact_fallback
            else:
                hits = collection.search_exact(query, request.k, allowed_ids=allowed)
                used_index, exact_fallback = False, False
            return {
                "hits": [
                    {
                        "id": hit.id,
                        "score": hit.score,
                        "distance": hit.distance,
                        "payload": hit.record.to_record(),
                    }
                    for hit in hits
                ],
                "used_index": used_index,
                "exact_fallback": exact_fallback,
            }
        finally:
            kb.close()

    @app.post("/identify", response_model=schemas.IdentifyResponse)
    def identify(request: schemas.IdentifyRequest):
        kb = _open_kb(request.kb_path)
        try:
            checkpoints: list[Checkpoint] = []
            if request.checkpoints:
                width = max(3, len(str(len(request.checkpoints))))
                for i, cp in enumerate(request.checkpoints, start=1):
                    checkpoints.append(
                        Checkpoint(
                            id=cp.id or f"cp-{i:0{width}d}",
                            text=cp.text,
                            topic=cp.topic,
                        )
                    )
            elif request.checkpoints_csv:
                checkpoints = parse_checkpoints_csv(request.checkpoints_csv)
            if not checkpoints:
                raise _error(422, "NO_CHECKPOINTS", "no checkpoints were provided")
            empty = [cp.id for cp in checkpoints if not cp.text.strip()]
            if empty:
                raise _error(
                    422,
                    "EMPTY_CHECKPOINT",
                    f"checkpoint(s) with empty text: {', '.join(empty)}",
                )

            settings = Settings(values=request.config)
            llm_config = settings.llm_config()
            try:
                provider = build_provider(llm_config)
            except (ValueError, OSError) as exc:
                raise _error(422, "BAD_PROVIDER", str(exc)) from exc
            pipeline = Pipeline(
                kb=kb,
                embedder=_kb_embedder(kb),
                provider=provider,
                config=PipelineConfig(
                    sampling=settings.sampling_config(),
                    retrieval=settings.retrieval_config(),
                    always_run_selection=settings.always_run_selection(),
                    resample_unparseable=settings.resample_unparseable(),
                ),
            )
            entries, summary = pipeline.run_checklist(checkpoints, mode=request.mode)
            run_metadata = {
                "tool": "clausecheck",
                "version": __version__,
                "kb_path": request.kb_path,
                "mode": request.mode,
                "seed": request.seed,
                "llm_provider": llm_config.provider_kind,
                "llm_model": llm_config.model_id,
                "embedding_provider": kb.embedding.get("provider_kind", ""),
                "embedding_model": kb.embedding.get("model_name", ""),
                "sampling": settings.sampling_config().to_record(),
                "retrieval": settings.retrieval_config().to_record(),
            }
            report = build_report(run_metadata, entries, summary)
            markdown = to_markdown(report) if request.include_markdown else None
            return {"report": report, "markdown": markdown}
        finally:
            kb.close()

    return app


def _recall_self_check(collection, k: int = 5, limit: int = 500) -> dict:
    """Sampled recall of the fresh index against exact search."""
    ids = collection.ids()
    n = len(ids)
    if n == 0:
        return {
            "collection": collection.name,
            "records": 0,
            "sampled_queries": 0,
            "recall_at_5": 1.0,
        }
    step = max(1, n // limit)
    sample_rows = range(0, n, step)
    matrix = collection.vector_matrix()
    total = 0.0
    count = 0
    for row in sample_rows:
        query = EmbeddingVector.of(matrix[row])
        exact = {hit.id for hit in collection.search_exact(query, k)}
        approx = {hit.id for hit in collection.search_ann(query, k).hits}
        denom = min(k, n)
        total += len(exact & approx) / denom
        count += 1
    recall = total / count if count else 1.0
    return {
        "collection": collection.name,
        "records": n,
        "sampled_queries": count,
        "recall_at_5": recall,
    }


app = create_app()
