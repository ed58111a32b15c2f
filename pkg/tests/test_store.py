import json
import threading

import numpy as np
import pytest

from clausecheck.embedding import DeterministicEmbedder
from clausecheck.hnsw import HnswParams
from clausecheck.models import EmbeddingVector, Metric
from clausecheck.store import (
    KnowledgeBase,
    SchemaMismatchError,
    StoreError,
    add_expert_pair,
    ingest_csv,
)
from conftest import CP1, CP2, FIXTURES

SMALL_PARAMS = HnswParams(max_degree=8, ef_construction=40, ef_search=60)


def make_kb(tmp_path, dim=256, name="kb", metric=Metric.EUCLIDEAN):
    return KnowledgeBase.create(
        tmp_path / name,
        dim=dim,
        metric=metric,
        hnsw_params=SMALL_PARAMS,
        embedding={"provider_kind": "deterministic", "model_name": "hash-v1",
                   "dim": dim},
    )


# -- ingestion -------------------------------------------------------------------


def test_ingest_project_fixture_counts(fixture_kb):
    assert len(fixture_kb.project) == 48
    assert len(fixture_kb.expert) == 8


def test_ingest_empty_file_with_header(tmp_path, embedder):
    kb = make_kb(tmp_path)
    report = ingest_csv(kb.project, "Clause_type,Clauses\n", embedder)
    assert report.ingested == 0
    assert report.total_rows == 0
    assert not report.skipped


def test_ingest_missing_header_column_is_schema_mismatch(tmp_path, embedder):
    kb = make_kb(tmp_path)
    with pytest.raises(SchemaMismatchError) as exc_info:
        ingest_csv(kb.expert, "Checkpoints,Clauses\na,b\n", embedder)
    assert exc_info.value.missing == ["Reviews"]


def test_ingest_row_with_missing_value_is_skipped(tmp_path, embedder):
    kb = make_kb(tmp_path)
    csv_text = (
        "Checkpoints,Clauses,Reviews\n"
        '"cp","clause one","review one"\n'
        '"cp","clause two",""\n'
        '"cp","clause three","review three"\n'
    )
    report = ingest_csv(kb.expert, csv_text, embedder)
    assert report.ingested == 2
    assert len(report.skipped) == 1
    assert report.skipped[0]["row"] == 3
    assert "Reviews" in report.skipped[0]["reason"]


def test_ingest_duplicate_explicit_id_skipped(tmp_path, embedder):
    kb = make_kb(tmp_path)
    csv_text = (
        "ID,Clause_type,Clauses\n"
        '7,"1.1 A","alpha"\n'
        '7,"1.2 B","beta"\n'
    )
    report = ingest_csv(kb.project, csv_text, embedder)
    assert report.ingested == 1
    assert len(report.skipped) == 1
    assert "duplicate id" in report.skipped[0]["reason"]


def test_ids_assigned_monotonically(fixture_kb):
    assert fixture_kb.project.ids() == list(range(48))
    assert fixture_kb.expert.ids() == list(range(8))


# -- exact search ------------------------------------------------------------------


def test_query_equal_to_stored_vector_ranks_first(tmp_path, embedder):
    kb = make_kb(tmp_path, metric=Metric.COSINE)
    ingest_csv(
        kb.project,
        'Clause_type,Clauses\n"1.1 A","alpha beta"\n"1.2 B","gamma delta"\n',
        embedder,
    )
    query = embedder.embed_text("1.1 A\nalpha beta")  # heading is embedded
    hits = kb.project.search_exact(query, k=1)
    assert hits[0].id == 0
    assert hits[0].score == pytest.approx(1.0, abs=1e-9)
    assert hits[0].similarity.metric is Metric.COSINE


def test_k_larger_than_collection_returns_all_sorted(fixture_kb, embedder):
    query = embedder.embed_text("termination for convenience")
    hits = fixture_kb.project.search_exact(query, k=500)
    assert len(hits) == 48
    scores = [h.score for h in hits]
    assert scores == sorted(scores, reverse=True)


def test_exact_search_matches_independent_scan(fixture_kb, embedder):
    """Full-scan oracle coded independently of the store's matrix path."""
    collection = fixture_kb.project
    matrix = collection.vector_matrix()
    ids = collection.ids()
    for text in ("advance payment guarantee", "force majeure event", "defects"):
        query = embedder.embed_text(text)
        q = np.asarray(query.values)
        scored = sorted(
            ((float(np.dot(matrix[row], q)), ids[row]) for row in range(len(ids))),
            key=lambda pair: (-pair[0], pair[1]),
        )
        expected = [record_id for _, record_id in scored[:5]]
        actual = [hit.id for hit in collection.search_exact(query, k=5)]
        assert actual == expected


def test_duplicate_vectors_tie_break_by_ascending_id(tmp_path, embedder):
    kb = make_kb(tmp_path)
    rows = "Clause_type,Clauses\n" + '"1.1 A","identical text"\n' * 3
    ingest_csv(kb.project, rows, embedder)
    query = embedder.embed_text("identical text")
    hits = kb.project.search_exact(query, k=3)
    assert [h.id for h in hits] == [0, 1, 2]


def test_insertion_order_permutation_invariance(tmp_path, embedder):
    texts = ["clause %d about topic %d" % (i, i % 7) for i in range(30)]
    kb_a = make_kb(tmp_path, name="kb_a")
    kb_b = make_kb(tmp_path, name="kb_b")
    for i, text in enumerate(texts):
        kb_a.project.append(
            {"clause_type": "s", "text": text, "source_doc": ""},
            embedder.embed_text(text),
            explicit_id=i,
        )
    for i in reversed(range(30)):
        kb_b.project.append(
            {"clause_type": "s", "text": texts[i], "source_doc": ""},
            embedder.embed_text(texts[i]),
            explicit_id=i,
        )
    query = embedder.embed_text("topic 3 clause")
    assert [h.id for h in kb_a.project.search_exact(query, 10)] == [
        h.id for h in kb_b.project.search_exact(query, 10)
    ]


def test_filter_then_search_equals_search_then_filter(fixture_kb, embedder):
    collection = fixture_kb.expert
    allowed = collection.filter_by_checkpoint(CP1)
    query = embedder.embed_text("financial closing before commencement")
    filtered = collection.search_exact(query, k=len(allowed), allowed_ids=allowed)
    unfiltered = collection.search_exact(query, k=len(collection))
    expected = [h.id for h in unfiltered if h.id in allowed][: len(allowed)]
    assert [h.id for h in filtered] == expected


# -- checkpoint filter ----------------------------------------------------------


def test_filter_by_checkpoint_partitions_pairs(fixture_kb):
    cp1_ids = fixture_kb.expert.filter_by_checkpoint(CP1)
    cp2_ids = fixture_kb.expert.filter_by_checkpoint(CP2)
    assert len(cp1_ids) == 4 and len(cp2_ids) == 4
    assert cp1_ids.isdisjoint(cp2_ids)
    assert cp1_ids | cp2_ids == set(range(8))


def test_filter_unknown_checkpoint_empty(fixture_kb):
    assert fixture_kb.expert.filter_by_checkpoint("unheard of requirement") == set()


def test_filter_ignores_trailing_whitespace_and_nfc(fixture_kb):
    assert fixture_kb.expert.filter_by_checkpoint(
        CP1 + "   "
    ) == fixture_kb.expert.filter_by_checkpoint(CP1)
    decomposed = CP1.replace("o", "ò", 1)
    composed = CP1.replace("o", "ò", 1)
    a = fixture_kb.expert.filter_by_checkpoint(decomposed)
    b = fixture_kb.expert.filter_by_checkpoint(composed)
    assert a == b  # both normalize to the same (absent) key


def test_filter_on_project_collection_rejected(fixture_kb):
    with pytest.raises(StoreError):
        fixture_kb.project.filter_by_checkpoint(CP1)


# -- ann search -------------------------------------------------------------------


def test_search_ann_without_index_falls_back_exact(fixture_kb, embedder):
    query = embedder.embed_text("insurance of the works")
    result = fixture_kb.project.search_ann(query, k=5)
    assert result.exact_fallback
    assert not result.used_index
    assert [h.id for h in result.hits] == [
        h.id for h in fixture_kb.project.search_exact(query, k=5)
    ]


def test_search_ann_with_index_matches_exact(fixture_kb, embedder):
    fixture_kb.project.build_index(SMALL_PARAMS, seed=7)
    query = embedder.embed_text("liquidated damages for delay")
    result = fixture_kb.project.search_ann(query, k=5)
    assert result.used_index
    assert [h.id for h in result.hits] == [
        h.id for h in fixture_kb.project.search_exact(query, k=5)
    ]
    # scores come from the exact path regardless of the index route
    for ann_hit, exact_hit in zip(
        result.hits, fixture_kb.project.search_exact(query, k=5)
    ):
        assert ann_hit.score == exact_hit.score


def test_small_filtered_search_bypasses_index(fixture_kb, embedder):
    fixture_kb.expert.build_index(SMALL_PARAMS, seed=7)
    allowed = fixture_kb.expert.filter_by_checkpoint(CP2)
    query = embedder.embed_text("waiver by mutual agreement")
    result = fixture_kb.expert.search_ann(query, k=3, allowed_ids=allowed)
    assert not result.used_index  # candidate set is tiny, scanned directly
    assert all(h.id in allowed for h in result.hits)


def test_search_ann_single_record_collection(tmp_path, embedder):
    kb = make_kb(tmp_path)
    ingest_csv(kb.project, 'Clause_type,Clauses\n"1.1 A","only clause"\n', embedder)
    kb.project.build_index(SMALL_PARAMS, seed=1)
    result = kb.project.search_ann(embedder.embed_text("anything at all"), k=3)
    assert [h.id for h in result.hits] == [0]


def test_filter_excluding_everything_returns_empty(fixture_kb, embedder):
    query = embedder.embed_text("anything")
    result = fixture_kb.expert.search_ann(query, k=3, allowed_ids=set())
    assert result.hits == []


# -- writes and persistence -------------------------------------------------------


def test_add_expert_pair_immediately_searchable(tmp_path, embedder):
    kb = make_kb(tmp_path)
    kb.expert.build_index(SMALL_PARAMS, seed=3)
    pair_id = add_expert_pair(
        kb.expert,
        checkpoint_text="Advance payment must be secured by a guarantee.",
        clause_text="The advance payment shall be repaid through deductions.",
        review_text="The clause aligns with the checkpoint.",
        embedder=embedder,
    )
    assert pair_id == 0
    assert kb.expert.has_index  # incremental update kept the cache fresh
    hits = kb.expert.search_exact(
        embedder.embed_text("The advance payment shall be repaid through deductions."),
        k=1,
    )
    assert hits[0].id == pair_id
    assert hits[0].record.review_text == "The clause aligns with the checkpoint."


def test_failed_embedding_writes_nothing(tmp_path, embedder):
    kb = make_kb(tmp_path)

    class ExplodingEmbedder:
        dim = 256

        def embed_text(self, text):
            raise RuntimeError("провайдер down")

    with pytest.raises(RuntimeError):
        add_expert_pair(kb.expert, "cp", "clause", "review", ExplodingEmbedder())
    assert len(kb.expert) == 0
    log = (tmp_path / "kb" / "expert_pairs.log").read_text()
    assert log == ""


def test_blank_fields_rejected_for_expert_pair(tmp_path, embedder):
    kb = make_kb(tmp_path)
    with pytest.raises(StoreError):
        add_expert_pair(kb.expert, "cp", "  ", "review", embedder)


def test_persistence_round_trip_reproduces_results(tmp_path, embedder):
    kb = make_kb(tmp_path)
    ingest_csv(
        kb.project,
        (FIXTURES / "project_clauses.csv").read_text(encoding="utf-8"),
        embedder,
    )
    kb.project.build_index(SMALL_PARAMS, seed=5)
    query = embedder.embed_text("suspension instructed by the employer")
    before_exact = [(h.id, h.score) for h in kb.project.search_exact(query, 7)]
    before_ann = [(h.id, h.score) for h in kb.project.search_ann(query, 7).hits]
    kb.close()

    reopened = KnowledgeBase.open(tmp_path / "kb")
    after_exact = [(h.id, h.score) for h in reopened.project.search_exact(query, 7)]
    after_ann = [(h.id, h.score) for h in reopened.project.search_ann(query, 7).hits]
    assert after_exact == before_exact
    assert after_ann == before_ann
    assert reopened.project.has_index
    reopened.close()


def test_stale_index_ignored_on_open(tmp_path, embedder):
    kb = make_kb(tmp_path)
    ingest_csv(kb.project, 'Clause_type,Clauses\n"1.1 A","alpha"\n', embedder)
    kb.project.build_index(SMALL_PARAMS, seed=1)
    # append after building: the on-disk graph is refreshed incrementally,
    # so corrupt it to simulate staleness
    kb.project.append(
        {"clause_type": "1.2 B", "text": "beta", "source_doc": ""},
        embedder.embed_text("beta"),
    )
    index_path = tmp_path / "kb" / "project_clauses.index"
    state = json.loads(index_path.read_text())
    state["count"] = 1
    state["levels"] = state["levels"][:1]
    state["ext_ids"] = state["ext_ids"][:1]
    state["links0"] = state["links0"][:1]
    index_path.write_text(json.dumps(state))
    kb.close()

    reopened = KnowledgeBase.open(tmp_path / "kb")
    assert not reopened.project.has_index
    result = reopened.project.search_ann(
        embedder.embed_text("beta"), k=1
    )
    assert result.exact_fallback and result.hits[0].id == 1
    reopened.close()


def test_torn_final_log_line_is_dropped(tmp_path, embedder):
    kb = make_kb(tmp_path)
    ingest_csv(
        kb.project,
        'Clause_type,Clauses\n"1.1 A","alpha"\n"1.2 B","beta"\n',
        embedder,
    )
    kb.close()
    log_path = tmp_path / "kb" / "project_clauses.log"
    content = log_path.read_text(encoding="utf-8")
    log_path.write_text(content + '{"id": 99, "payl', encoding="utf-8")
    reopened = KnowledgeBase.open(tmp_path / "kb")
    assert len(reopened.project) == 2
    reopened.close()


def test_custom_collections_supported(tmp_path, embedder):
    kb = make_kb(tmp_path)
    extra = kb.create_collection("project_clauses_2", "project_clauses")
    ingest_csv(extra, 'Clause_type,Clauses\n"9.9 X","xyzzy"\n', embedder)
    kb.close()
    reopened = KnowledgeBase.open(tmp_path / "kb")
    assert sorted(reopened.collection_names()) == [
        "expert_pairs",
        "project_clauses",
        "project_clauses_2",
    ]
    assert len(reopened.collection("project_clauses_2")) == 1
    reopened.close()


def test_create_refuses_to_clobber(tmp_path):
    make_kb(tmp_path)
    with pytest.raises(StoreError):
        make_kb(tmp_path)


def test_open_missing_kb_raises(tmp_path):
    with pytest.raises(StoreError):
        KnowledgeBase.open(tmp_path / "absent")


def test_concurrent_readers_never_see_partial_records(tmp_path, embedder):
    kb = make_kb(tmp_path)
    stop = threading.Event()
    errors = []

    def writer():
        try:
            for i in range(60):
                kb.project.append(
                    {"clause_type": "s", "text": f"clause {i}", "source_doc": ""},
                    embedder.embed_text(f"clause {i}"),
                )
        finally:
            stop.set()

    def reader():
        query = embedder.embed_text("clause")
        while not stop.is_set():
            try:
                for hit in kb.project.search_exact(query, k=5) if len(
                    kb.project
                ) else []:
                    assert hit.record.text.startswith("clause ")
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)
                stop.set()

    threads = [threading.Thread(target=writer)] + [
        threading.Thread(target=reader) for _ in range(3)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(kb.project) == 60


def test_vector_dim_checked_on_append(tmp_path):
    kb = make_kb(tmp_path, dim=16)
    with pytest.raises(StoreError):
        kb.project.append(
            {"clause_type": "a", "text": "b", "source_doc": ""},
            EmbeddingVector.of([1.0, 0.0]),
        )


def test_embed_headings_toggle(tmp_path):
    embedder = DeterministicEmbedder(dim=64)
    kb = make_kb(tmp_path, dim=64)
    ingest_csv(
        kb.project,
        'Clause_type,Clauses\n"4.1 Condition Precedent","The works begin."\n',
        embedder,
        embed_headings=False,
    )
    query = embedder.embed_text("The works begin.")
    assert kb.project.search_exact(query, 1)[0].score == pytest.approx(1.0)
