"""Domain types shared across the package.

Everything here is an immutable value object: safe to share between threads
and cheap to serialize. The canonical serialized form of each type is a flat
dict produced by ``to_record`` and consumed by ``from_record``; reports and
fixtures use that form.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field
from enum import Enum


class Verdict(str, Enum):
    """Outcome of judging a specific condition against a checkpoint.

    CONTRADICT and NOT_FOUND flag the condition as risky; ENTAIL does not.
    """

    CONTRADICT = "contradict"
    ENTAIL = "entail"
    NOT_FOUND = "not_found"

    @property
    def is_risky(self) -> bool:
        return self in (Verdict.CONTRADICT, Verdict.NOT_FOUND)

    @classmethod
    def from_label(cls, label: str) -> "Verdict":
        """Resolve a serialized label; raises ValueError on anything else."""
        normalized = label.strip().lower().replace(" ", "_")
        for verdict in cls:
            if verdict.value == normalized:
                return verdict
        raise ValueError(f"unknown verdict label: {label!r}")

    @classmethod
    def from_option_letter(cls, letter: str) -> "Verdict":
        """Map a multiple-choice option letter (A/B/C) to its verdict."""
        mapping = {"A": cls.CONTRADICT, "B": cls.ENTAIL, "C": cls.NOT_FOUND}
        try:
            return mapping[letter.upper()]
        except KeyError:
            raise ValueError(f"unknown option letter: {letter!r}") from None


# Tie-break preference when vote counts are equal: a reviewer would rather
# raise a false alarm than miss a risk.
VERDICT_TIE_ORDER = (Verdict.CONTRADICT, Verdict.NOT_FOUND, Verdict.ENTAIL)


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


def normalize_checkpoint_text(text: str) -> str:
    """Canonical form used for exact checkpoint matching: NFC plus trim."""
    return unicodedata.normalize("NFC", text).strip()


@dataclass(frozen=True)
class Checkpoint:
    """A natural-language risk requirement to check clauses against."""

    id: str
    text: str
    topic: str | None = None

    def to_record(self) -> dict:
        return {"id": self.id, "text": self.text, "topic": self.topic}

    @classmethod
    def from_record(cls, record: dict) -> "Checkpoint":
        return cls(id=record["id"], text=record["text"], topic=record.get("topic"))


@dataclass(frozen=True)
class ClauseChunk:
    """One semantically coherent contract text unit with its section label."""

    id: int
    clause_type: str
    text: str
    source_doc: str = ""

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "clause_type": self.clause_type,
            "text": self.text,
            "source_doc": self.source_doc,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ClauseChunk":
        return cls(
            id=record["id"],
            clause_type=record["clause_type"],
            text=record["text"],
            source_doc=record.get("source_doc", ""),
        )


@dataclass(frozen=True)
class ExpertPair:
    """A past risky clause, its expert review, and the checkpoint it answers.

    Many pairs may share one checkpoint_text: the relation is one-to-many.
    """

    id: int
    checkpoint_text: str
    clause_text: str
    review_text: str

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "checkpoint_text": self.checkpoint_text,
            "clause_text": self.clause_text,
            "review_text": self.review_text,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ExpertPair":
        return cls(
            id=record["id"],
            checkpoint_text=record["checkpoint_text"],
            clause_text=record["clause_text"],
            review_text=record["review_text"],
        )


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension real vector representation of a text unit."""

    values: tuple[float, ...]
    dim: int = 1536

    @classmethod
    def of(cls, values) -> "EmbeddingVector":
        vals = tuple(float(v) for v in values)
        return cls(values=vals, dim=len(vals))

    def to_record(self) -> dict:
        return {"values": list(self.values), "dim": self.dim}

    @classmethod
    def from_record(cls, record: dict) -> "EmbeddingVector":
        return cls(values=tuple(record["values"]), dim=record["dim"])


@dataclass(frozen=True)
class Suggestion:
    """One sampled answer: the parsed verdict plus its supporting text.

    Construction implies the verdict was successfully parsed out of
    raw_response; unparseable samples never become Suggestions.
    """

    verdict: Verdict
    explanation: str
    raw_response: str
    sample_index: int

    def to_record(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "explanation": self.explanation,
            "raw_response": self.raw_response,
            "sample_index": self.sample_index,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Suggestion":
        return cls(
            verdict=Verdict.from_label(record["verdict"]),
            explanation=record["explanation"],
            raw_response=record["raw_response"],
            sample_index=record["sample_index"],
        )


@dataclass(frozen=True)
class SuggestionSet:
    suggestions: tuple[Suggestion, ...]

    @classmethod
    def of(cls, suggestions) -> "SuggestionSet":
        return cls(suggestions=tuple(suggestions))

    def __len__(self) -> int:
        return len(self.suggestions)

    def to_record(self) -> dict:
        return {"suggestions": [s.to_record() for s in self.suggestions]}

    @classmethod
    def from_record(cls, record: dict) -> "SuggestionSet":
        return cls.of(Suggestion.from_record(r) for r in record["suggestions"])


@dataclass(frozen=True)
class SamplingConfig:
    """How many model samples each stage draws, and at what temperature."""

    n_qa_samples: int = 5
    n_vote_samples: int = 5
    temperature: float = 0.3

    def to_record(self) -> dict:
        return {
            "n_qa_samples": self.n_qa_samples,
            "n_vote_samples": self.n_vote_samples,
            "temperature": self.temperature,
        }

    @classmethod
    def from_record(cls, record: dict) -> "SamplingConfig":
        return cls(**record)


@dataclass(frozen=True)
class RetrievalConfig:
    k_clauses: int = 5
    k_pairs: int = 3
    metric: Metric = Metric.EUCLIDEAN

    def to_record(self) -> dict:
        return {
            "k_clauses": self.k_clauses,
            "k_pairs": self.k_pairs,
            "metric": self.metric.value,
        }

    @classmethod
    def from_record(cls, record: dict) -> "RetrievalConfig":
        return cls(
            k_clauses=record["k_clauses"],
            k_pairs=record["k_pairs"],
            metric=Metric(record["metric"]),
        )


@dataclass(frozen=True)
class ScoredClause:
    """A retrieved clause with its ranking score and raw distance."""

    chunk: ClauseChunk
    score: float
    distance: float

    def to_record(self) -> dict:
        record = self.chunk.to_record()
        record["score"] = self.score
        record["distance"] = self.distance
        return record

    @classmethod
    def from_record(cls, record: dict) -> "ScoredClause":
        return cls(
            chunk=ClauseChunk.from_record(record),
            score=record["score"],
            distance=record["distance"],
        )


@dataclass(frozen=True)
class ScoredPair:
    """A retrieved expert pair with its ranking score and raw distance."""

    pair: ExpertPair
    score: float
    distance: float

    def to_record(self) -> dict:
        record = self.pair.to_record()
        record["score"] = self.score
        record["distance"] = self.distance
        return record

    @classmethod
    def from_record(cls, record: dict) -> "ScoredPair":
        return cls(
            pair=ExpertPair.from_record(record),
            score=record["score"],
            distance=record["distance"],
        )


@dataclass(frozen=True)
class IdentificationResult:
    """Final voted verdict for one checkpoint, with full provenance."""

    checkpoint: Checkpoint
    retrieved_clauses: tuple[ScoredClause, ...]
    retrieved_pairs: tuple[ScoredPair, ...]
    suggestions: SuggestionSet
    votes: dict[int, int]
    final_verdict: Verdict
    final_explanation: str
    tie_broken: bool
    # Which prompt produced the suggestions: "qa", "standard", or
    # "standard_fallback" (no expert knowledge matched the checkpoint).
    prompt_kind: str = "qa"
    # Set when at least half of the answer samples failed to parse.
    degraded: bool = False

    @property
    def is_risky(self) -> bool:
        return self.final_verdict.is_risky

    def to_record(self) -> dict:
        return {
            "checkpoint": self.checkpoint.to_record(),
            "retrieved_clauses": [c.to_record() for c in self.retrieved_clauses],
            "retrieved_pairs": [p.to_record() for p in self.retrieved_pairs],
            "suggestions": [s.to_record() for s in self.suggestions.suggestions],
            "votes": {str(k): v for k, v in self.votes.items()},
            "final_verdict": self.final_verdict.value,
            "final_explanation": self.final_explanation,
            "tie_broken": self.tie_broken,
            "prompt_kind": self.prompt_kind,
            "degraded": self.degraded,
            "is_risky": self.is_risky,
        }

    @classmethod
    def from_record(cls, record: dict) -> "IdentificationResult":
        return cls(
            checkpoint=Checkpoint.from_record(record["checkpoint"]),
            retrieved_clauses=tuple(
                ScoredClause.from_record(r) for r in record["retrieved_clauses"]
            ),
            retrieved_pairs=tuple(
                ScoredPair.from_record(r) for r in record["retrieved_pairs"]
            ),
            suggestions=SuggestionSet.of(
                Suggestion.from_record(r) for r in record["suggestions"]
            ),
            votes={int(k): v for k, v in record["votes"].items()},
            final_verdict=Verdict.from_label(record["final_verdict"]),
            final_explanation=record["final_explanation"],
            tie_broken=record["tie_broken"],
            prompt_kind=record.get("prompt_kind", "qa"),
            degraded=record.get("degraded", False),
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    name: str
    message: str
    severity: str = "error"  # "error" or "warning"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """True when no error-severity violation is present."""
        return not any(v.severity == "error" for v in self.violations)

    def __bool__(self) -> bool:
        return self.ok

    def add(self, name: str, message: str, severity: str = "error") -> None:
        self.violations.append(Violation(name, message, severity))


def validate(record) -> ValidationReport:
    """Check every invariant of a domain value; empty report means all hold."""
    report = ValidationReport()
    if isinstance(record, Checkpoint):
        _validate_checkpoint(record, report)
    elif isinstance(record, ClauseChunk):
        _validate_clause_chunk(record, report)
    elif isinstance(record, ExpertPair):
        _validate_expert_pair(record, report)
    elif isinstance(record, EmbeddingVector):
        _validate_embedding_vector(record, report)
    elif isinstance(record, Verdict):
        pass  # enum membership is the invariant; construction enforces it
    elif isinstance(record, Suggestion):
        _validate_suggestion(record, report)
    elif isinstance(record, SuggestionSet):
        _validate_suggestion_set(record, report)
    elif isinstance(record, SamplingConfig):
        _validate_sampling_config(record, report)
    elif isinstance(record, RetrievalConfig):
        _validate_retrieval_config(record, report)
    elif isinstance(record, IdentificationResult):
        _validate_identification_result(record, report)
    else:
        report.add("unknown-type", f"no validation rules for {type(record).__name__}")
    return report


def _validate_checkpoint(cp: Checkpoint, report: ValidationReport) -> None:
    if not cp.text.strip():
        report.add("empty-text", "checkpoint text is empty after trimming")


def _validate_clause_chunk(chunk: ClauseChunk, report: ValidationReport) -> None:
    if not chunk.text.strip():
        report.add("empty-text", "clause text is empty")
    if not chunk.clause_type.strip():
        report.add("empty-clause-type", "clause_type is empty")


def _validate_expert_pair(pair: ExpertPair, report: ValidationReport) -> None:
    for name, value in (
        ("checkpoint_text", pair.checkpoint_text),
        ("clause_text", pair.clause_text),
        ("review_text", pair.review_text),
    ):
        if not value.strip():
            report.add(f"empty-{name}", f"{name} is empty")


def _validate_embedding_vector(vec: EmbeddingVector, report: ValidationReport) -> None:
    if len(vec.values) != vec.dim:
        report.add(
            "dim-mismatch",
            f"vector has {len(vec.values)} components, declared dim {vec.dim}",
        )
    if any(not math.isfinite(v) for v in vec.values):
        report.add("non-finite component", "vector contains a non-finite value")


def _validate_suggestion(s: Suggestion, report: ValidationReport) -> None:
    if not isinstance(s.verdict, Verdict):
        report.add("bad-verdict", f"verdict is not a Verdict: {s.verdict!r}")
    if s.sample_index < 0:
        report.add("bad-sample-index", "sample_index must be non-negative")


def _validate_suggestion_set(ss: SuggestionSet, report: ValidationReport) -> None:
    if len(ss.suggestions) < 1:
        report.add("empty-set", "suggestion set must hold at least one suggestion")
    indices = [s.sample_index for s in ss.suggestions]
    if len(set(indices)) != len(indices):
        report.add("duplicate-sample-index", "sample_index values are not distinct")
    for s in ss.suggestions:
        for v in validate(s).violations:
            report.violations.append(v)


def _validate_sampling_config(cfg: SamplingConfig, report: ValidationReport) -> None:
    if cfg.n_qa_samples < 1:
        report.add("bad-n-qa", "n_qa_samples must be at least 1")
    elif cfg.n_qa_samples < 5:
        report.add(
            "few-qa-samples",
            f"n_qa_samples={cfg.n_qa_samples} is below the recommended minimum of 5",
            severity="warning",
        )
    if cfg.n_vote_samples < 1:
        report.add("bad-n-vote", "n_vote_samples must be at least 1")
    if not (0.0 <= cfg.temperature <= 2.0):
        report.add("bad-temperature", "temperature must be within [0, 2]")


def _validate_retrieval_config(cfg: RetrievalConfig, report: ValidationReport) -> None:
    if cfg.k_clauses < 1:
        report.add("bad-k-clauses", "k_clauses must be at least 1")
    if cfg.k_pairs < 1:
        report.add("bad-k-pairs", "k_pairs must be at least 1")


def _validate_identification_result(
    result: IdentificationResult, report: ValidationReport
) -> None:
    suggestion_verdicts = {s.verdict for s in result.suggestions.suggestions}
    if result.final_verdict not in suggestion_verdicts:
        report.add(
            "verdict-not-among-suggestions",
            "final_verdict does not match any suggestion's verdict",
        )
    explanations = {s.explanation for s in result.suggestions.suggestions}
    if result.final_explanation and result.final_explanation not in explanations:
        report.add(
            "explanation-not-among-suggestions",
            "final_explanation does not appear among the suggestions",
        )
    n = len(result.suggestions)
    for choice in result.votes:
        if not (1 <= choice <= n):
            report.add(
                "vote-choice-out-of-range",
                f"vote references choice {choice}, but only {n} suggestions exist",
            )
    for v in validate(result.suggestions).violations:
        report.violations.append(v)
