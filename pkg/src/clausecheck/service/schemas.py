"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ChunkRequest(BaseModel):
    text: str
    max_chunk_chars: int = 4000
    source_doc: str = ""


class ChunkOut(BaseModel):
    id: int
    clause_type: str
    text: str
    source_doc: str


class ChunkResponse(BaseModel):
    chunks: list[ChunkOut]
    warnings: list[str]
    csv_text: str


class IngestRequest(BaseModel):
    kb_path: str
    kind: Literal["project", "expert"]
    csv_text: str
    source_name: str = ""
    collection: str | None = None
    create_if_missing: bool = True
    config: dict[str, str] = Field(default_factory=dict)


class SkippedRow(BaseModel):
    row: int
    reason: str


class IngestResponse(BaseModel):
    collection: str
    total_rows: int
    ingested: int
    skipped: list[SkippedRow]
    warnings: list[str]
    kb_created: bool


class AddPairRequest(BaseModel):
    kb_path: str
    checkpoint: str
    clause_text: str
    review_text: str
    config: dict[str, str] = Field(default_factory=dict)


class AddPairResponse(BaseModel):
    id: int


class BuildIndexRequest(BaseModel):
    kb_path: str
    collections: list[str] | None = None
    max_degree: int | None = None
    ef_search: int | None = None
    ef_construction: int | None = None
    seed: int | None = None


class IndexCheck(BaseModel):
    collection: str
    records: int
    sampled_queries: int
    recall_at_5: float


class BuildIndexResponse(BaseModel):
    checks: list[IndexCheck]


class SearchRequest(BaseModel):
    kb_path: str
    collection: str
    query_text: str
    k: int = 5
    checkpoint_filter: str | None = None
    use_index: bool = True


class SearchHit(BaseModel):
    id: int
    score: float
    distance: float
    payload: dict


class SearchResponse(BaseModel):
    hits: list[SearchHit]
    used_index: bool
    exact_fallback: bool


class CheckpointIn(BaseModel):
    id: str | None = None
    text: str
    topic: str | None = None


class IdentifyRequest(BaseModel):
    kb_path: str
    mode: Literal["augmented", "standard", "both"] = "both"
    checkpoints: list[CheckpointIn] | None = None
    checkpoints_csv: str | None = None
    config: dict[str, str] = Field(default_factory=dict)
    seed: int | None = None
    include_markdown: bool = False


class IdentifyResponse(BaseModel):
    report: dict
    markdown: str | None = None


class ErrorBody(BaseModel):
    code: str
    message: str
    details: list[dict] = Field(default_factory=list)
