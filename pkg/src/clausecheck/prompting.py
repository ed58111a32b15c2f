"""Prompt rendering and model-output parsing.

Three prompt shapes exist. The question-answering prompt is few-shot: one
exemplar block per retrieved clause-review pair, a summary slot the model
fills in the same completion, then the new question. The response-selection
prompt lists previously sampled answers as numbered choices and asks for
the most promising one. The standard prompt is the zero-shot baseline used
when no expert knowledge matches a checkpoint.

Templates live as text files with ``{placeholder}`` slots next to this
module, so prompt wording can be audited or replaced without code changes.
Rendering is pure: the same inputs always produce the same bytes, and
inserted texts appear verbatim inside triple-backtick delimiters.

Parsing is last-occurrence based: the templates demand the final answer at
the end of the output, and models often restate the options earlier on.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .models import Checkpoint, ScoredPair, SuggestionSet, Verdict

QA = "qa"
SELECTION = "selection"
STANDARD = "standard"

EXEMPLAR_SEPARATOR = "\n\n"
CHOICE_SEPARATOR = "\n"

_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")
_OPTION_RE = re.compile(r"\[([ABCabc])\]")
_KEYWORD_RE = re.compile(r"\b(contradicts?|entails?|not\s+found)\b", re.IGNORECASE)
_CHOICE_RE = re.compile(r"choice\s*#?\s*(\d+)", re.IGNORECASE)
_SENTENCE_BOUNDARIES = ".!?\n"


class UnparseableAnswer(Exception):
    """No verdict could be read out of a model output."""


class UnparseableVote(Exception):
    """No usable choice number could be read out of a voting output."""


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    kind: str
    slots: dict

    def to_record(self) -> dict:
        return {"text": self.text, "kind": self.kind, "slots": dict(self.slots)}


@dataclass(frozen=True)
class ParsedAnswer:
    verdict: Verdict
    explanation: str


@dataclass(frozen=True)
class ParsedVote:
    chosen_index: int


def _fill(template: str, slots: dict) -> str:
    """Single-pass placeholder substitution; inserted values are never
    rescanned, so braces inside clause text are inert."""

    def replace(match: re.Match) -> str:
        name = match.group(1)
        if name not in slots:
            raise KeyError(f"template placeholder {{{name}}} has no value")
        return str(slots[name])

    return _PLACEHOLDER_RE.sub(replace, template)


class PromptLibrary:
    """Loads and renders the shipped (or overridden) prompt templates."""

    def __init__(self, template_dir: str | Path | None = None):
        self._template_dir = Path(template_dir) if template_dir else None
        self._cache: dict[str, str] = {}

    def _template(self, name: str) -> str:
        if name not in self._cache:
            if self._template_dir is not None:
                raw = (self._template_dir / f"{name}.txt").read_text(encoding="utf-8")
            else:
                raw = (
                    resources.files("clausecheck")
                    .joinpath(f"templates/{name}.txt")
                    .read_text(encoding="utf-8")
                )
            self._cache[name] = raw.rstrip("\n")
        return self._cache[name]

    def render_qa_prompt(
        self,
        checkpoint: Checkpoint,
        bundle,
        pairs: list[ScoredPair],
    ) -> RenderedPrompt:
        """Few-shot prompt: one exemplar per pair, then the new question."""
        if not pairs:
            raise ValueError(
                "the question-answering prompt needs at least one clause-review "
                "pair; use the standard prompt instead"
            )
        exemplar_template = self._template("qa_exemplar")
        slots: dict = {
            "checkpoint": checkpoint.text,
            "specific_conditions": bundle.merged_text,
        }
        blocks = []
        for i, scored in enumerate(pairs, start=1):
            pair = scored.pair
            blocks.append(
                _fill(
                    exemplar_template,
                    {
                        "checkpoint": pair.checkpoint_text,
                        "clause": pair.clause_text,
                        "review": pair.review_text,
                    },
                )
            )
            slots[f"checkpoint_{i}"] = pair.checkpoint_text
            slots[f"clause_{i}"] = pair.clause_text
            slots[f"review_{i}"] = pair.review_text
        text = _fill(
            self._template("qa_main"),
            {
                "exemplars": EXEMPLAR_SEPARATOR.join(blocks),
                "checkpoint": checkpoint.text,
                "specific_conditions": bundle.merged_text,
            },
        )
        return RenderedPrompt(text=text, kind=QA, slots=slots)

    def render_selection_prompt(
        self,
        checkpoint: Checkpoint,
        merged_conditions: str,
        suggestions: SuggestionSet,
    ) -> RenderedPrompt:
        """Voting prompt listing each sampled answer as a numbered choice."""
        if len(suggestions) < 2:
            raise ValueError("selection over fewer than two choices is a no-op")
        choice_template = self._template("selection_choice")
        slots: dict = {
            "checkpoint": checkpoint.text,
            "specific_conditions": merged_conditions,
        }
        lines = []
        for i, suggestion in enumerate(suggestions.suggestions, start=1):
            lines.append(
                _fill(
                    choice_template,
                    {"index": i, "suggestion": suggestion.raw_response},
                )
            )
            slots[f"suggestion_{i}"] = suggestion.raw_response
        text = _fill(
            self._template("selection_main"),
            {
                "checkpoint": checkpoint.text,
                "specific_conditions": merged_conditions,
                "choices": CHOICE_SEPARATOR.join(lines),
            },
        )
        return RenderedPrompt(text=text, kind=SELECTION, slots=slots)

    def render_standard_prompt(
        self, checkpoint: Checkpoint, merged_conditions: str
    ) -> RenderedPrompt:
        slots = {
            "checkpoint": checkpoint.text,
            "specific_conditions": merged_conditions,
        }
        text = _fill(self._template("standard"), slots)
        return RenderedPrompt(text=text, kind=STANDARD, slots=slots)


# ---------------------------------------------------------------------------
# Output parsing
# ---------------------------------------------------------------------------


def parse_answer(model_output: str) -> ParsedAnswer:
    """Read the verdict out of a model answer.

    The last bracketed option letter wins; failing that, the last standalone
    contradict/entail/not-found keyword (case-insensitive). The explanation
    is the output minus the sentence holding the final answer.
    """
    matches = [
        (m.start(), m.end(), Verdict.from_option_letter(m.group(1)))
        for m in _OPTION_RE.finditer(model_output)
    ]
    if not matches:
        for m in _KEYWORD_RE.finditer(model_output):
            word = m.group(1).lower()
            if word.startswith("contradict"):
                verdict = Verdict.CONTRADICT
            elif word.startswith("entail"):
                verdict = Verdict.ENTAIL
            else:
                verdict = Verdict.NOT_FOUND
            matches.append((m.start(), m.end(), verdict))
    if not matches:
        raise UnparseableAnswer("no verdict token found in model output")
    start, end, verdict = matches[-1]
    return ParsedAnswer(
        verdict=verdict, explanation=_without_answer_sentence(model_output, start, end)
    )


def _without_answer_sentence(text: str, start: int, end: int) -> str:
    sentence_start = (
        max(text.rfind(ch, 0, start) for ch in _SENTENCE_BOUNDARIES) + 1
    )
    ends = [pos for ch in _SENTENCE_BOUNDARIES if (pos := text.find(ch, end)) != -1]
    sentence_end = min(ends) + 1 if ends else len(text)
    remainder = (text[:sentence_start] + text[sentence_end:]).strip()
    return re.sub(r"^Explanation:\s*", "", remainder).strip()


def parse_vote(model_output: str, n_choices: int) -> ParsedVote:
    """Read the last "choice <i>" mention; out-of-range votes are invalid."""
    if n_choices < 2:
        raise ValueError("voting requires at least two choices")
    matches = _CHOICE_RE.findall(model_output)
    if not matches:
        raise UnparseableVote("no choice mention found in voting output")
    chosen = int(matches[-1])
    if not 1 <= chosen <= n_choices:
        raise UnparseableVote(
            f"choice {chosen} is outside the valid range 1..{n_choices}"
        )
    return ParsedVote(chosen_index=chosen)
