"""The two retrieval stages that feed the prompting pipeline.

Stage one embeds a checkpoint and pulls the closest project clauses, which
are merged (in score order) into a single specific-conditions text. Stage
two is a hybrid search over the expert collection: an exact checkpoint
match narrows the candidate pool first, and only then is vector similarity
against the merged clause text used to rank what survived. The filter is
not optional; a pair for a different checkpoint is never returned no
matter how close its vector is.
"""

from __future__ import annotations

import logging

from .models import Checkpoint, RetrievalConfig, ScoredClause, ScoredPair
from .store import Collection, KnowledgeBase, RetrievalHit

logger = logging.getLogger(__name__)

MERGE_DELIMITER = "\n\n"


class EmptyProjectBaseError(Exception):
    """Identification cannot proceed without any project clauses."""


class ClauseBundle:
    """Top project clauses for one checkpoint, merged into a single text."""

    def __init__(self, clauses: list[ScoredClause]):
        self.clauses = tuple(clauses)
        self.merged_text = MERGE_DELIMITER.join(c.chunk.text for c in self.clauses)

    def __len__(self) -> int:
        return len(self.clauses)

    def to_record(self) -> dict:
        return {
            "clauses": [c.to_record() for c in self.clauses],
            "merged_text": self.merged_text,
        }


def merge_clauses(hits: list[RetrievalHit]) -> str:
    """Join clause texts in hit order (non-increasing score, ties by id)."""
    return MERGE_DELIMITER.join(hit.record.text for hit in hits)


def retrieve_project_clauses(
    checkpoint: Checkpoint,
    kb: KnowledgeBase,
    embedder,
    config: RetrievalConfig | None = None,
) -> ClauseBundle:
    """Embed the checkpoint and return the top clauses from the project base."""
    config = config or RetrievalConfig()
    collection = kb.project
    if len(collection) == 0:
        raise EmptyProjectBaseError("the project clause base is empty")
    query = embedder.embed_text(checkpoint.text)
    result = collection.search_ann(query, config.k_clauses)
    scored = [
        ScoredClause(chunk=hit.record, score=hit.score, distance=hit.distance)
        for hit in result.hits
    ]
    return ClauseBundle(scored)


def retrieve_clause_review_pairs(
    checkpoint: Checkpoint,
    bundle: ClauseBundle,
    kb: KnowledgeBase,
    embedder,
    config: RetrievalConfig | None = None,
    expert_collection: Collection | None = None,
) -> list[ScoredPair]:
    """Hybrid search: checkpoint filter first, then vector ranking.

    Returns the top pairs among those whose checkpoint matches exactly.
    An empty list means no expert knowledge exists for this checkpoint;
    callers fall back to the standard prompt rather than treating that
    as an error.
    """
    config = config or RetrievalConfig()
    if len(bundle) == 0:
        raise ValueError("clause bundle is empty; retrieve project clauses first")
    collection = expert_collection if expert_collection is not None else kb.expert
    candidates = collection.filter_by_checkpoint(checkpoint.text)
    if not candidates:
        logger.info(
            "no expert pairs share checkpoint %r; standard prompt applies",
            checkpoint.id,
        )
        return []
    query = embedder.embed_text(bundle.merged_text)
    result = collection.search_ann(query, config.k_pairs, allowed_ids=candidates)
    return [
        ScoredPair(pair=hit.record, score=hit.score, distance=hit.distance)
        for hit in result.hits
    ]
