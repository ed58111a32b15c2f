from __future__ import annotations

import json
from pathlib import Path

import pytest

from clausecheck.embedding import DeterministicEmbedder
from clausecheck.hnsw import HnswParams
from clausecheck.models import (
    Checkpoint,
    ClauseChunk,
    ExpertPair,
    Metric,
    ScoredClause,
    ScoredPair,
    Suggestion,
    SuggestionSet,
    Verdict,
)
from clausecheck.retrieval import ClauseBundle
from clausecheck.store import KnowledgeBase, ingest_csv

FIXTURES = Path(__file__).parent / "fixtures"


def pytest_runtest_logreport(report):
    """One visible line per acceptance criterion (run with -s)."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        outcome = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"[acceptance] {outcome} {name}")

CP1 = "The Financial Closing Date shall have occurred before the Commencement Date."
CP2 = (
    "The conditions precedent should only be waived by mutual agreement "
    "between the Project Company and the Contractor."
)


@pytest.fixture(scope="session")
def embedder():
    return DeterministicEmbedder(dim=256)


@pytest.fixture
def fixture_kb(tmp_path, embedder):
    """Knowledge base loaded with the 48-clause and 8-pair fixture files."""
    kb = KnowledgeBase.create(
        tmp_path / "kb",
        dim=embedder.dim,
        metric=Metric.EUCLIDEAN,
        hnsw_params=HnswParams(),
        embedding={"provider_kind": "deterministic", "model_name": "hash-v1",
                   "dim": embedder.dim},
    )
    ingest_csv(
        kb.project,
        (FIXTURES / "project_clauses.csv").read_text(encoding="utf-8"),
        embedder,
        source="project_clauses.csv",
    )
    ingest_csv(
        kb.expert,
        (FIXTURES / "expert_pairs.csv").read_text(encoding="utf-8"),
        embedder,
        source="expert_pairs.csv",
    )
    yield kb
    kb.close()


def read_fixture(relative: str) -> str:
    return (FIXTURES / relative).read_text(encoding="utf-8")


def write_mock_script(path: Path, sequence=None, by_prompt=None) -> Path:
    script = {}
    if sequence is not None:
        script["sequence"] = sequence
    if by_prompt is not None:
        script["by_prompt"] = by_prompt
    path.write_text(json.dumps(script), encoding="utf-8")
    return path


def answer_text(verdict: str, reason: str) -> str:
    letter = {"contradict": "A", "entail": "B", "not_found": "C"}[verdict]
    word = {"contradict": "contradicts", "entail": "entails",
            "not_found": "not found"}[verdict]
    return (
        f"The specific condition assessment follows. {reason} "
        f"The answer is therefore [{letter}] {word}."
    )


def golden_prompt_inputs():
    """Frozen inputs for the prompt golden files; do not edit casually."""
    checkpoint = Checkpoint(
        id="cp-2", text=CP2, topic="Precondition of Commencement"
    )
    clause_a = ClauseChunk(
        id=6,
        clause_type="4.1 Condition Precedent",
        text=(
            "The Contract shall come into full force and effect on the Date "
            "on which all of the conditions precedent listed in Schedule 2 "
            "have been satisfied or waived by the Owner in writing."
        ),
        source_doc="project_clauses.csv",
    )
    clause_b = ClauseChunk(
        id=7,
        clause_type="4.2 Waiver of Conditions",
        text=(
            "Any condition precedent may be waived only by a written "
            "instrument executed by the Party for whose benefit the condition "
            "operates, and a waiver of one condition shall not constitute a "
            "waiver of any other condition."
        ),
        source_doc="project_clauses.csv",
    )
    bundle = ClauseBundle(
        [
            ScoredClause(chunk=clause_a, score=0.41, distance=1.086),
            ScoredClause(chunk=clause_b, score=0.32, distance=1.166),
        ]
    )
    pairs = [
        ScoredPair(
            pair=ExpertPair(
                id=4,
                checkpoint_text=CP2,
                clause_text=(
                    "The Company shall issue an NTP if the Conditions "
                    "Precedent are defined as satisfied or waived; any such "
                    "waiver may be declared by the Company acting alone "
                    "without the concurrence of the Contractor."
                ),
                review_text=(
                    "A particular provision appears to be in conflict with "
                    "the checkpoint. The clause permits the Company to waive "
                    "conditions precedent acting alone, without the "
                    "Contractor's concurrence. A unilateral waiver right is "
                    "incompatible with the requirement that waiver occur only "
                    "by mutual agreement of the Project Company and the "
                    "Contractor."
                ),
            ),
            score=0.37,
            distance=1.122,
        ),
        ScoredPair(
            pair=ExpertPair(
                id=5,
                checkpoint_text=CP2,
                clause_text=(
                    "Commencement Date refers to the date when the Contractor "
                    "receives the Notice to Proceed from the Project Company; "
                    "conditions precedent to the Notice to Proceed may be "
                    "relinquished by either Party for any reason at its sole "
                    "discretion."
                ),
                review_text=(
                    "A particular provision appears to be in conflict with "
                    "the checkpoint. Allowing either Party to relinquish "
                    "conditions precedent at its sole discretion means a "
                    "waiver can occur without the agreement of the other "
                    "Party, contrary to the checkpoint's requirement of "
                    "mutual agreement."
                ),
            ),
            score=0.33,
            distance=1.158,
        ),
        ScoredPair(
            pair=ExpertPair(
                id=7,
                checkpoint_text=CP2,
                clause_text=(
                    "No waiver of any condition precedent shall be effective "
                    "unless recorded in a deed of waiver executed by both the "
                    "Project Company and the Contractor."
                ),
                review_text=(
                    "The provision is consistent with the checkpoint. The "
                    "clause requires every waiver of a condition precedent to "
                    "be executed by both the Project Company and the "
                    "Contractor, which is precisely the mutual agreement the "
                    "checkpoint demands."
                ),
            ),
            score=0.29,
            distance=1.192,
        ),
    ]
    suggestions = SuggestionSet.of(
        [
            Suggestion(
                verdict=Verdict.CONTRADICT,
                explanation="The waiver is unilateral.",
                raw_response=answer_text(
                    "contradict", "The waiver right sits with one party only."
                ),
                sample_index=0,
            ),
            Suggestion(
                verdict=Verdict.ENTAIL,
                explanation="Both parties must sign the deed of waiver.",
                raw_response=answer_text(
                    "entail", "Both parties must execute any waiver."
                ),
                sample_index=1,
            ),
            Suggestion(
                verdict=Verdict.CONTRADICT,
                explanation="One party can relinquish conditions alone.",
                raw_response=answer_text(
                    "contradict", "Sole discretion defeats mutual agreement."
                ),
                sample_index=2,
            ),
        ]
    )
    return checkpoint, bundle, pairs, suggestions
