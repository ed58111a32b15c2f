"""End-to-end risk identification for checkpoints.

The augmented path retrieves project clauses and expert pairs, samples the
few-shot question-answering prompt several times, and, unless all samples
already agree, runs a second round of selection sampling whose votes pick
the winning suggestion. The standard path skips expert knowledge and
resolves a majority directly over the sampled verdicts; it also serves as
the fallback when no expert pair matches a checkpoint.

Tie rule: equal vote counts resolve by verdict preference contradict >
not found > entail (a reviewer prefers false alarms over missed risks),
then by lowest choice number. Whenever the rule fires, the result carries
tie_broken=True.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import llm
from .models import (
    Checkpoint,
    IdentificationResult,
    RetrievalConfig,
    SamplingConfig,
    Suggestion,
    SuggestionSet,
    VERDICT_TIE_ORDER,
    Verdict,
)
from .prompting import (
    PromptLibrary,
    UnparseableAnswer,
    UnparseableVote,
    parse_answer,
    parse_vote,
)
from .retrieval import (
    ClauseBundle,
    retrieve_clause_review_pairs,
    retrieve_project_clauses,
)

logger = logging.getLogger(__name__)

MODE_AUGMENTED = "augmented"
MODE_STANDARD = "standard"
MODE_BOTH = "both"


class NoParseableSamplesError(Exception):
    """Every sampled answer failed to parse; there is nothing to vote on."""


@dataclass
class PipelineConfig:
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    # run the selection stage even when all answers agree (fidelity mode)
    always_run_selection: bool = False
    # one extra draw per unparseable answer before counting it missing
    resample_unparseable: bool = True


def resolve_votes(
    votes: dict[int, int], verdict_of: dict[int, Verdict]
) -> tuple[int, bool]:
    """Pick the winning choice from a tally.

    Returns (choice, tie_broken). Highest count wins; ties fall to the
    risk-conservative verdict order, then to the lowest choice number.
    A tally of all zeros counts as a tie across every choice.
    """
    if not votes:
        raise ValueError("cannot resolve an empty tally")
    rank = {verdict: i for i, verdict in enumerate(VERDICT_TIE_ORDER)}
    best = min(
        votes, key=lambda c: (-votes[c], rank[verdict_of[c]], c)
    )
    top = max(votes.values())
    tie_broken = sum(1 for count in votes.values() if count == top) > 1
    return best, tie_broken


class Pipeline:
    def __init__(self, kb, embedder, provider,
                 prompts: PromptLibrary | None = None,
                 config: PipelineConfig | None = None):
        self.kb = kb
        self.embedder = embedder
        self.provider = provider
        self.prompts = prompts or PromptLibrary()
        self.config = config or PipelineConfig()

    # -- sampling helpers ----------------------------------------------------

    def _collect_suggestions(self, prompt) -> tuple[list[Suggestion], bool]:
        """Sample the prompt n_qa times and parse each answer.

        Returns the parsed suggestions plus a degraded flag set when at
        least half the requested samples produced nothing usable.
        """
        n = self.config.sampling.n_qa_samples
        temperature = self.config.sampling.temperature
        batch = llm.sample(self.provider, prompt, n, temperature)
        suggestions: list[Suggestion] = []
        unparseable = 0
        index = 0
        for output in batch.outputs:
            try:
                parsed = parse_answer(output)
            except UnparseableAnswer:
                unparseable += 1
                logger.warning("discarding unparseable answer sample %d", index)
            else:
                suggestions.append(
                    Suggestion(
                        verdict=parsed.verdict,
                        explanation=parsed.explanation,
                        raw_response=output,
                        sample_index=index,
                    )
                )
            index += 1
        if unparseable and self.config.resample_unparseable:
            retry = llm.sample(self.provider, prompt, unparseable, temperature)
            for output in retry.outputs:
                try:
                    parsed = parse_answer(output)
                except UnparseableAnswer:
                    logger.warning("resampled answer %d still unparseable", index)
                else:
                    suggestions.append(
                        Suggestion(
                            verdict=parsed.verdict,
                            explanation=parsed.explanation,
                            raw_response=output,
                            sample_index=index,
                        )
                    )
                index += 1
        if not suggestions:
            raise NoParseableSamplesError(
                "no sampled answer contained a recognizable verdict"
            )
        degraded = (n - len(suggestions)) * 2 >= n
        return suggestions, degraded

    def _vote(self, checkpoint: Checkpoint, merged_conditions: str,
              suggestions: list[Suggestion]) -> tuple[dict[int, int], int, bool]:
        """Run the selection round; returns (votes, winning choice, tie flag)."""
        suggestion_set = SuggestionSet.of(suggestions)
        prompt = self.prompts.render_selection_prompt(
            checkpoint, merged_conditions, suggestion_set
        )
        batch = llm.sample(
            self.provider,
            prompt,
            self.config.sampling.n_vote_samples,
            self.config.sampling.temperature,
        )
        votes = {i: 0 for i in range(1, len(suggestions) + 1)}
        for output in batch.outputs:
            try:
                vote = parse_vote(output, n_choices=len(suggestions))
            except UnparseableVote:
                logger.warning("discarding unparseable vote")
                continue
            votes[vote.chosen_index] += 1
        verdict_of = {
            i: suggestions[i - 1].verdict for i in range(1, len(suggestions) + 1)
        }
        winner, tie_broken = resolve_votes(votes, verdict_of)
        return votes, winner, tie_broken

    # -- identification ------------------------------------------------------

    def identify(self, checkpoint: Checkpoint) -> IdentificationResult:
        """Knowledge-augmented identification with two-stage prompting."""
        bundle = retrieve_project_clauses(
            checkpoint, self.kb, self.embedder, self.config.retrieval
        )
        pairs = retrieve_clause_review_pairs(
            checkpoint, bundle, self.kb, self.embedder, self.config.retrieval
        )
        if not pairs:
            return self._identify_by_majority(
                checkpoint, bundle, prompt_kind="standard_fallback"
            )
        prompt = self.prompts.render_qa_prompt(checkpoint, bundle, pairs)
        suggestions, degraded = self._collect_suggestions(prompt)

        verdicts = {s.verdict for s in suggestions}
        unanimous = len(verdicts) == 1
        if len(suggestions) < 2 or (unanimous and not self.config.always_run_selection):
            # selection over identical (or single) choices is vacuous
            final = suggestions[0]
            votes: dict[int, int] = {}
            winner_explanation = final.explanation
            final_verdict = final.verdict
            tie_broken = False
        else:
            votes, winner, tie_broken = self._vote(
                checkpoint, bundle.merged_text, suggestions
            )
            final_verdict = suggestions[winner - 1].verdict
            winner_explanation = suggestions[winner - 1].explanation
        return IdentificationResult(
            checkpoint=checkpoint,
            retrieved_clauses=bundle.clauses,
            retrieved_pairs=tuple(pairs),
            suggestions=SuggestionSet.of(suggestions),
            votes=votes,
            final_verdict=final_verdict,
            final_explanation=winner_explanation,
            tie_broken=tie_broken,
            prompt_kind="qa",
            degraded=degraded,
        )

    def identify_standard(self, checkpoint: Checkpoint) -> IdentificationResult:
        """Baseline: standard prompt only, majority over sampled verdicts."""
        bundle = retrieve_project_clauses(
            checkpoint, self.kb, self.embedder, self.config.retrieval
        )
        return self._identify_by_majority(checkpoint, bundle, prompt_kind="standard")

    def _identify_by_majority(self, checkpoint: Checkpoint, bundle: ClauseBundle,
                              prompt_kind: str) -> IdentificationResult:
        prompt = self.prompts.render_standard_prompt(checkpoint, bundle.merged_text)
        suggestions, degraded = self._collect_suggestions(prompt)
        # each verdict group is one implicit choice, represented by its first
        # suggestion; the group's size is its vote count
        representative: dict[Verdict, int] = {}
        votes: dict[int, int] = {}
        for position, suggestion in enumerate(suggestions, start=1):
            if suggestion.verdict not in representative:
                representative[suggestion.verdict] = position
                votes[position] = 0
            votes[representative[suggestion.verdict]] += 1
        verdict_of = {pos: suggestions[pos - 1].verdict for pos in votes}
        winner, tie_broken = resolve_votes(votes, verdict_of)
        final = suggestions[winner - 1]
        return IdentificationResult(
            checkpoint=checkpoint,
            retrieved_clauses=bundle.clauses,
            retrieved_pairs=(),
            suggestions=SuggestionSet.of(suggestions),
            votes=votes,
            final_verdict=final.verdict,
            final_explanation=final.explanation,
            tie_broken=tie_broken,
            prompt_kind=prompt_kind,
            degraded=degraded,
        )

    # -- batch runs ----------------------------------------------------------

    def run_checklist(self, checkpoints: list[Checkpoint],
                      mode: str = MODE_BOTH) -> tuple[list[dict], dict]:
        """Identify every checkpoint in every requested mode.

        Per-checkpoint failures are captured as error entries; the batch
        never aborts. Entries are ordered by checkpoint id, then mode.
        """
        if not checkpoints:
            raise ValueError("the checklist is empty")
        if mode not in (MODE_AUGMENTED, MODE_STANDARD, MODE_BOTH):
            raise ValueError(f"unknown mode: {mode!r}")
        modes = [MODE_AUGMENTED, MODE_STANDARD] if mode == MODE_BOTH else [mode]

        entries: list[dict] = []
        summary = {
            "checkpoints": len(checkpoints),
            "results": 0,
            "risky": 0,
            "non_risky": 0,
            "degraded": 0,
            "failed": 0,
        }
        for checkpoint in sorted(checkpoints, key=lambda c: c.id):
            for run_mode in modes:
                entry: dict = {"checkpoint_id": checkpoint.id, "mode": run_mode}
                try:
                    if run_mode == MODE_AUGMENTED:
                        result = self.identify(checkpoint)
                    else:
                        result = self.identify_standard(checkpoint)
                except llm.ProviderUnavailableError as exc:
                    entry.update(
                        status="error",
                        result=None,
                        error=str(exc),
                        error_kind="provider_unavailable",
                    )
                    summary["failed"] += 1
                except Exception as exc:
                    logger.exception(
                        "identification failed for checkpoint %r", checkpoint.id
                    )
                    entry.update(
                        status="error",
                        result=None,
                        error=f"{type(exc).__name__}: {exc}",
                        error_kind="other",
                    )
                    summary["failed"] += 1
                else:
                    entry.update(status="ok", result=result.to_record(), error=None,
                                 error_kind=None)
                    summary["results"] += 1
                    summary["risky" if result.is_risky else "non_risky"] += 1
                    if result.degraded:
                        summary["degraded"] += 1
                entries.append(entry)
        return entries, summary
