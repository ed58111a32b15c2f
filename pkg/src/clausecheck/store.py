"""Persistent vector knowledge base with exact and approximate search.

A knowledge base is a directory holding one append-only JSONL log per
collection plus a ``manifest`` file (dimension, metric, index parameters,
embedding provider). Two collection kinds exist: project clauses (the
contract under review) and expert pairs (past risky clauses with reviews,
keyed by checkpoint). Graph index files are caches: they can always be
rebuilt from the logs and are ignored when stale.

Concurrency contract per collection: many concurrent readers or one
writer. Appends publish the record count last, so a search never observes
a half-inserted record.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import EmbeddingVector, SimilarityScore, normalize
from .hnsw import HnswIndex, HnswParams
from .models import ClauseChunk, ExpertPair, Metric, normalize_checkpoint_text

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest"
PROJECT_COLLECTION = "project_clauses"
EXPERT_COLLECTION = "expert_pairs"

KIND_PROJECT = "project_clauses"
KIND_EXPERT = "expert_pairs"

PROJECT_COLUMNS = ("Clause_type", "Clauses")
EXPERT_COLUMNS = ("Checkpoints", "Clauses", "Reviews")

# Below this candidate count a metadata filter is served by scanning the
# candidates directly; graph traversal plus filtering would be slower and
# less accurate on so few nodes.
FILTERED_BRUTE_FORCE_LIMIT = 1000


class StoreError(Exception):
    pass


class SchemaMismatchError(StoreError):
    """The tabular input lacks required columns for the collection kind."""

    def __init__(self, missing: list[str], kind: str):
        super().__init__(
            f"input is missing required column(s) {', '.join(missing)} "
            f"for a {kind} collection"
        )
        self.missing = missing


@dataclass(frozen=True)
class RetrievalHit:
    """One search result: higher score is closer; ties order by id."""

    id: int
    score: float
    distance: float
    record: ClauseChunk | ExpertPair
    metric: Metric

    @property
    def similarity(self) -> SimilarityScore:
        if self.metric == Metric.EUCLIDEAN:
            return SimilarityScore(value=self.distance, metric=Metric.EUCLIDEAN)
        return SimilarityScore(value=self.score, metric=Metric.COSINE)


@dataclass
class SearchResult:
    hits: list[RetrievalHit]
    used_index: bool = False
    exact_fallback: bool = False  # True when no usable graph index existed


@dataclass
class IngestReport:
    collection: str
    total_rows: int = 0
    ingested: int = 0
    skipped: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "collection": self.collection,
            "total_rows": self.total_rows,
            "ingested": self.ingested,
            "skipped": self.skipped,
            "warnings": self.warnings,
        }


class Collection:
    """One named record set: payloads plus normalized embedding vectors."""

    def __init__(self, name: str, kind: str, dim: int, metric: Metric,
                 log_path: Path, index_path: Path):
        if kind not in (KIND_PROJECT, KIND_EXPERT):
            raise StoreError(f"unknown collection kind: {kind!r}")
        self.name = name
        self.kind = kind
        self.dim = dim
        self.metric = metric
        self._log_path = log_path
        self._index_path = index_path
        self._lock = threading.RLock()
        self._records: list[ClauseChunk | ExpertPair] = []
        self._ids: list[int] = []
        self._id_to_row: dict[int, int] = {}
        self._matrix = np.zeros((64, dim), dtype=np.float64)
        self._count = 0
        self._next_id = 0
        self._index: HnswIndex | None = None
        self._by_checkpoint: dict[str, set[int]] = {}
        self._log_file = None
        self._warned_no_index = False

    # -- lifecycle ----------------------------------------------------------

    def load(self) -> None:
        if not self._log_path.exists():
            self._log_path.touch()
        with self._log_path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    # a torn final line from an interrupted append is dropped
                    logger.warning(
                        "%s: ignoring unparseable log line %d", self.name, line_no
                    )
                    continue
                record = self._materialize(entry["id"], entry["payload"])
                vector = np.asarray(entry["vector"], dtype=np.float64)
                self._append_loaded(record, vector)
        self._log_file = self._log_path.open("a", encoding="utf-8")
        self._load_index()

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None

    def _materialize(self, record_id: int, payload: dict) -> ClauseChunk | ExpertPair:
        if self.kind == KIND_PROJECT:
            return ClauseChunk(
                id=record_id,
                clause_type=payload["clause_type"],
                text=payload["text"],
                source_doc=payload.get("source_doc", ""),
            )
        return ExpertPair(
            id=record_id,
            checkpoint_text=payload["checkpoint_text"],
            clause_text=payload["clause_text"],
            review_text=payload["review_text"],
        )

    def _append_loaded(self, record, vector: np.ndarray) -> None:
        row = self._count
        self._grow(row + 1)
        self._matrix[row] = vector
        self._records.append(record)
        self._ids.append(record.id)
        self._id_to_row[record.id] = row
        if self.kind == KIND_EXPERT:
            key = normalize_checkpoint_text(record.checkpoint_text)
            self._by_checkpoint.setdefault(key, set()).add(record.id)
        self._next_id = max(self._next_id, record.id + 1)
        self._count = row + 1

    def _grow(self, needed: int) -> None:
        capacity = self._matrix.shape[0]
        if needed <= capacity:
            return
        grown = np.zeros((max(capacity * 2, needed), self.dim), dtype=np.float64)
        grown[:capacity] = self._matrix
        self._matrix = grown

    # -- writes -------------------------------------------------------------

    def append(self, payload: dict, vector: EmbeddingVector,
               explicit_id: int | None = None) -> int:
        """Persist one record; returns its id. Publishes count last."""
        if vector.dim != self.dim:
            raise StoreError(
                f"vector dim {vector.dim} does not match collection dim {self.dim}"
            )
        arr = np.asarray(normalize(vector).values, dtype=np.float64)
        with self._lock:
            if explicit_id is not None:
                if explicit_id in self._id_to_row:
                    raise StoreError(f"duplicate id {explicit_id}")
                record_id = explicit_id
            else:
                record_id = self._next_id
            record = self._materialize(record_id, payload)
            entry = {"id": record_id, "payload": payload, "vector": arr.tolist()}
            self._log_file.write(json.dumps(entry, ensure_ascii=False) + "\n")
            self._log_file.flush()
            self._append_loaded(record, arr)
            if self._index is not None:
                self._index.add(arr, record_id)
                self._index.save(self._index_path)
        return record_id

    # -- search -------------------------------------------------------------

    def __len__(self) -> int:
        return self._count

    def get(self, record_id: int):
        return self._records[self._id_to_row[record_id]]

    def records(self) -> list:
        return list(self._records[: self._count])

    def vector_matrix(self) -> np.ndarray:
        """Copy of the stored vectors, row-aligned with ids()."""
        return self._matrix[: self._count].copy()

    def ids(self) -> list[int]:
        return list(self._ids[: self._count])

    def _query_array(self, query: EmbeddingVector) -> np.ndarray:
        if query.dim != self.dim:
            raise StoreError(
                f"query dim {query.dim} does not match collection dim {self.dim}"
            )
        return np.asarray(normalize(query).values, dtype=np.float64)

    def _hits_for_rows(self, rows: np.ndarray, scores: np.ndarray,
                       k: int) -> list[RetrievalHit]:
        ids = np.asarray(self._ids, dtype=np.int64)[rows]
        order = np.lexsort((ids, -scores))[:k]
        hits = []
        for pos in order:
            row = int(rows[pos])
            score = float(scores[pos])
            distance = math.sqrt(max(0.0, 2.0 - 2.0 * score))
            hits.append(
                RetrievalHit(
                    id=int(ids[pos]),
                    score=score,
                    distance=distance,
                    record=self._records[row],
                    metric=self.metric,
                )
            )
        return hits

    def search_exact(self, query: EmbeddingVector, k: int,
                     allowed_ids: set[int] | None = None) -> list[RetrievalHit]:
        """True top-k by similarity; the oracle the graph index approximates.

        Scores are cosines of unit vectors (equal to 1 - d^2/2), so one
        descending sort serves both metrics; ties break by ascending id.
        """
        if k < 1:
            raise ValueError("k must be at least 1")
        n = self._count
        if n == 0:
            return []
        q = self._query_array(query)
        if allowed_ids is not None:
            rows = np.asarray(
                sorted(self._id_to_row[i] for i in allowed_ids if i in self._id_to_row),
                dtype=np.int64,
            )
            if rows.size == 0:
                return []
            scores = self._matrix[rows] @ q
        else:
            rows = np.arange(n, dtype=np.int64)
            scores = self._matrix[:n] @ q
        return self._hits_for_rows(rows, scores, k)

    def search_ann(self, query: EmbeddingVector, k: int,
                   allowed_ids: set[int] | None = None,
                   ef: int | None = None) -> SearchResult:
        """Approximate top-k via the graph index, exact re-scored.

        Small filtered candidate sets are scanned directly; a missing or
        stale index degrades to exact search and flags the fallback.
        """
        if allowed_ids is not None and len(allowed_ids) <= FILTERED_BRUTE_FORCE_LIMIT:
            return SearchResult(hits=self.search_exact(query, k, allowed_ids))
        if self._index is None or len(self._index) != self._count:
            if not self._warned_no_index:
                logger.warning(
                    "%s: no usable vector index, serving exact search", self.name
                )
                self._warned_no_index = True
            return SearchResult(
                hits=self.search_exact(query, k, allowed_ids), exact_fallback=True
            )
        q = self._query_array(query)
        found = self._index.search(q, k, ef=ef, allowed_ext=allowed_ids)
        if allowed_ids is not None and len(found) < min(k, len(allowed_ids)):
            # the beam did not surface enough allowed nodes; be exact instead
            return SearchResult(
                hits=self.search_exact(query, k, allowed_ids), exact_fallback=True
            )
        rows = np.asarray([self._id_to_row[ext] for ext, _ in found], dtype=np.int64)
        if rows.size == 0:
            return SearchResult(hits=[], used_index=True)
        scores = self._matrix[rows] @ q
        return SearchResult(hits=self._hits_for_rows(rows, scores, k), used_index=True)

    def filter_by_checkpoint(self, checkpoint_text: str) -> set[int]:
        """Ids of expert pairs whose checkpoint matches exactly (NFC + trim)."""
        if self.kind != KIND_EXPERT:
            raise StoreError("checkpoint filtering applies to expert collections")
        key = normalize_checkpoint_text(checkpoint_text)
        return set(self._by_checkpoint.get(key, set()))

    # -- index --------------------------------------------------------------

    @property
    def has_index(self) -> bool:
        return self._index is not None and len(self._index) == self._count

    def build_index(self, params: HnswParams, seed: int | None = None) -> HnswIndex:
        with self._lock:
            index = HnswIndex(dim=self.dim, params=params, seed=seed)
            for row in range(self._count):
                index.add(self._matrix[row], self._ids[row])
            index.save(self._index_path)
            self._index = index
        return index

    def _load_index(self) -> None:
        if not self._index_path.exists():
            return
        try:
            index = HnswIndex.load(self._index_path, self._matrix[: self._count])
        except Exception:
            logger.warning("%s: index file unreadable, ignoring", self.name)
            return
        if len(index) != self._count:
            logger.warning(
                "%s: index is stale (%d of %d records), ignoring",
                self.name,
                len(index),
                self._count,
            )
            return
        self._index = index


class KnowledgeBase:
    """A directory of collections sharing one dimension and metric."""

    def __init__(self, root: Path, dim: int, metric: Metric,
                 hnsw_params: HnswParams, embedding: dict,
                 collections: dict[str, str], embed_headings: bool = True):
        self.root = Path(root)
        self.dim = dim
        self.metric = metric
        self.hnsw_params = hnsw_params
        self.embedding = embedding  # provider config record, for reopening
        self.embed_headings = embed_headings
        self._collection_kinds = dict(collections)
        self._collections: dict[str, Collection] = {}

    @classmethod
    def create(cls, root: str | Path, dim: int, metric: Metric = Metric.EUCLIDEAN,
               hnsw_params: HnswParams | None = None,
               embedding: dict | None = None,
               embed_headings: bool = True) -> "KnowledgeBase":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        if (root / MANIFEST_NAME).exists():
            raise StoreError(f"knowledge base already exists at {root}")
        kb = cls(
            root=root,
            dim=dim,
            metric=metric,
            hnsw_params=hnsw_params or HnswParams(),
            embedding=embedding or {},
            collections={
                PROJECT_COLLECTION: KIND_PROJECT,
                EXPERT_COLLECTION: KIND_EXPERT,
            },
            embed_headings=embed_headings,
        )
        kb._write_manifest()
        kb._open_collections()
        return kb

    @classmethod
    def open(cls, root: str | Path) -> "KnowledgeBase":
        root = Path(root)
        manifest_path = root / MANIFEST_NAME
        if not manifest_path.exists():
            raise StoreError(f"no knowledge base manifest at {root}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        kb = cls(
            root=root,
            dim=manifest["dim"],
            metric=Metric(manifest["metric"]),
            hnsw_params=HnswParams.from_record(manifest["hnsw"]),
            embedding=manifest.get("embedding", {}),
            collections=manifest["collections"],
            embed_headings=manifest.get("embed_headings", True),
        )
        kb._open_collections()
        return kb

    @classmethod
    def open_or_create(cls, root: str | Path, dim: int,
                       metric: Metric = Metric.EUCLIDEAN,
                       hnsw_params: HnswParams | None = None,
                       embedding: dict | None = None,
                       embed_headings: bool = True) -> "KnowledgeBase":
        root = Path(root)
        if (root / MANIFEST_NAME).exists():
            return cls.open(root)
        return cls.create(
            root,
            dim=dim,
            metric=metric,
            hnsw_params=hnsw_params,
            embedding=embedding,
            embed_headings=embed_headings,
        )

    def _write_manifest(self) -> None:
        manifest = {
            "version": 1,
            "dim": self.dim,
            "metric": self.metric.value,
            "hnsw": self.hnsw_params.to_record(),
            "embedding": self.embedding,
            "embed_headings": self.embed_headings,
            "collections": self._collection_kinds,
        }
        (self.root / MANIFEST_NAME).write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
        )

    def _open_collections(self) -> None:
        for name, kind in self._collection_kinds.items():
            collection = Collection(
                name=name,
                kind=kind,
                dim=self.dim,
                metric=self.metric,
                log_path=self.root / f"{name}.log",
                index_path=self.root / f"{name}.index",
            )
            collection.load()
            self._collections[name] = collection

    def collection(self, name: str) -> Collection:
        try:
            return self._collections[name]
        except KeyError:
            raise StoreError(f"no collection named {name!r}") from None

    def create_collection(self, name: str, kind: str) -> Collection:
        if name in self._collections:
            raise StoreError(f"collection {name!r} already exists")
        collection = Collection(
            name=name,
            kind=kind,
            dim=self.dim,
            metric=self.metric,
            log_path=self.root / f"{name}.log",
            index_path=self.root / f"{name}.index",
        )
        collection.load()
        self._collections[name] = collection
        self._collection_kinds[name] = kind
        self._write_manifest()
        return collection

    @property
    def project(self) -> Collection:
        return self.collection(PROJECT_COLLECTION)

    @property
    def expert(self) -> Collection:
        return self.collection(EXPERT_COLLECTION)

    def collection_names(self) -> list[str]:
        return sorted(self._collections)

    def close(self) -> None:
        for collection in self._collections.values():
            collection.close()


# ---------------------------------------------------------------------------
# Tabular ingestion
# ---------------------------------------------------------------------------


def ingest_csv(collection: Collection, csv_text: str, embedder,
               source: str = "", embed_headings: bool = True) -> IngestReport:
    """Ingest a comma-separated file (header row required, UTF-8).

    Project collections expect Clause_type and Clauses columns; expert
    collections expect Checkpoints, Clauses, and Reviews. An optional ID
    column forces explicit ids; duplicates and incomplete rows are skipped
    row by row and listed in the report.
    """
    report = IngestReport(collection=collection.name)
    reader = csv.DictReader(io.StringIO(csv_text))
    header = [h.strip() for h in (reader.fieldnames or [])]
    required = PROJECT_COLUMNS if collection.kind == KIND_PROJECT else EXPERT_COLUMNS
    missing = [col for col in required if col not in header]
    if missing:
        raise SchemaMismatchError(missing, collection.kind)

    pending: list[tuple[int, dict, str, int | None]] = []
    for row_no, row in enumerate(reader, start=2):  # header is line 1
        report.total_rows += 1
        values = {k.strip(): (v or "").strip() for k, v in row.items() if k}
        empty = [col for col in required if not values.get(col)]
        if empty:
            report.skipped.append(
                {"row": row_no, "reason": f"missing value for {', '.join(empty)}"}
            )
            continue
        explicit_id: int | None = None
        if values.get("ID"):
            try:
                explicit_id = int(values["ID"])
            except ValueError:
                report.skipped.append(
                    {"row": row_no, "reason": f"non-integer ID {values['ID']!r}"}
                )
                continue
        if collection.kind == KIND_PROJECT:
            payload = {
                "clause_type": values["Clause_type"],
                "text": values["Clauses"],
                "source_doc": source,
            }
            embed_text = (
                f"{payload['clause_type']}\n{payload['text']}"
                if embed_headings
                else payload["text"]
            )
        else:
            payload = {
                "checkpoint_text": values["Checkpoints"],
                "clause_text": values["Clauses"],
                "review_text": values["Reviews"],
            }
            embed_text = payload["clause_text"]
        pending.append((row_no, payload, embed_text, explicit_id))

    if pending:
        vectors = embedder.embed_batch([item[2] for item in pending])
        for (row_no, payload, _, explicit_id), vector in zip(pending, vectors):
            try:
                collection.append(payload, vector, explicit_id=explicit_id)
            except StoreError as exc:
                report.skipped.append({"row": row_no, "reason": str(exc)})
                continue
            report.ingested += 1
    return report


def add_expert_pair(collection: Collection, checkpoint_text: str,
                    clause_text: str, review_text: str, embedder) -> int:
    """Append one clause-review pair; embeds first so a failure writes nothing."""
    if collection.kind != KIND_EXPERT:
        raise StoreError("expert pairs belong in an expert collection")
    for name, value in (
        ("checkpoint", checkpoint_text),
        ("clause", clause_text),
        ("review", review_text),
    ):
        if not value.strip():
            raise StoreError(f"{name} text must not be empty")
    vector = embedder.embed_text(clause_text)
    payload = {
        "checkpoint_text": checkpoint_text,
        "clause_text": clause_text,
        "review_text": review_text,
    }
    return collection.append(payload, vector)
