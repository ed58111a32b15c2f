"""Segment a contract document into clause chunks aligned to its sections.

Headings are detected by a dotted-numeral rule ("4.1 Condition Precedent")
with an ALL-CAPS fallback. Section bodies that exceed the size limit are
split at paragraph boundaries, the strongest cheap coherence signal, so a
chunk never mixes content from two sections and never splits a paragraph.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .models import ClauseChunk

PREAMBLE_LABEL = "PREAMBLE"

# A dotted numeral ("4.1", "10.2.3") or a numeral with a trailing dot ("4.")
# followed by a title. Long lines and lines ending like sentences are body
# text that merely starts with a section reference.
_DOTTED_HEADING = re.compile(r"^(?:\d+(?:\.\d+)+|\d+\.)\s+\S.*$")
_MAX_HEADING_CHARS = 100
_MAX_CAPS_HEADING_CHARS = 80


@dataclass(frozen=True)
class ChunkerConfig:
    max_chunk_chars: int = 4000
    # optional regex replacing the dotted-numeral rule; the ALL-CAPS
    # fallback still applies either way
    heading_pattern: str | None = None

    def __post_init__(self):
        if self.max_chunk_chars < 200:
            raise ValueError("max_chunk_chars must be at least 200")
        if self.heading_pattern is not None:
            re.compile(self.heading_pattern)


@dataclass
class SegmentationResult:
    chunks: list[ClauseChunk]
    # ids of chunks consisting of a single paragraph longer than the limit,
    # emitted whole rather than split mid-paragraph
    oversize_chunk_ids: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def is_heading(line: str, heading_pattern: str | None = None) -> bool:
    stripped = line.strip()
    if not stripped:
        return False
    if heading_pattern is not None:
        if re.match(heading_pattern, stripped):
            return True
    elif len(stripped) <= _MAX_HEADING_CHARS and _DOTTED_HEADING.match(stripped):
        if not stripped.endswith((".", ",", ";", ":")) or _only_numeral(stripped):
            return True
    if (
        len(stripped) <= _MAX_CAPS_HEADING_CHARS
        and stripped == stripped.upper()
        and re.search(r"[A-Z]", stripped)
        and not stripped.endswith((".", ",", ";", ":"))
    ):
        return True
    return False


def _only_numeral(line: str) -> bool:
    # "4." style headings keep their trailing dot on the numeral itself
    head = line.split(None, 1)[0]
    return bool(re.fullmatch(r"\d+\.", head))


def segment(document: str, config: ChunkerConfig | None = None,
            source_doc: str = "") -> SegmentationResult:
    """Segment a plain-text contract into labeled chunks.

    Every chunk carries the nearest preceding heading as its clause_type;
    body text before the first heading is labeled PREAMBLE. Concatenating
    the chunk texts in order reproduces the document's non-heading body
    text up to whitespace normalization.
    """
    config = config or ChunkerConfig()
    result = SegmentationResult(chunks=[])
    if not document or not document.strip():
        return result

    sections = _split_sections(document, config.heading_pattern)
    next_id = 0
    for heading, paragraphs in sections:
        if not paragraphs:
            continue
        for pack in _pack_paragraphs(paragraphs, config.max_chunk_chars):
            text = "\n\n".join(pack)
            chunk = ClauseChunk(
                id=next_id, clause_type=heading, text=text, source_doc=source_doc
            )
            result.chunks.append(chunk)
            if len(pack) == 1 and len(text) > config.max_chunk_chars:
                result.oversize_chunk_ids.append(next_id)
                result.warnings.append(
                    f"chunk {next_id} under '{heading}' is a single paragraph of "
                    f"{len(text)} chars, above the {config.max_chunk_chars} limit"
                )
            next_id += 1
    return result


def segment_contract(document: str, config: ChunkerConfig | None = None,
                     source_doc: str = "") -> list[ClauseChunk]:
    return segment(document, config, source_doc).chunks


def _split_sections(
    document: str, heading_pattern: str | None = None
) -> list[tuple[str, list[str]]]:
    """Group the document into (heading, paragraphs) in source order."""
    sections: list[tuple[str, list[str]]] = []
    current_heading = PREAMBLE_LABEL
    current_lines: list[str] = []

    def flush():
        paragraphs = _paragraphs(current_lines)
        if paragraphs or sections or current_heading != PREAMBLE_LABEL:
            sections.append((current_heading, paragraphs))

    for line in document.splitlines():
        if is_heading(line, heading_pattern):
            flush()
            current_heading = line.strip()
            current_lines = []
        else:
            current_lines.append(line)
    flush()
    return sections


def _paragraphs(lines: list[str]) -> list[str]:
    paragraphs: list[str] = []
    buffer: list[str] = []
    for line in lines:
        if line.strip():
            buffer.append(line.rstrip())
        elif buffer:
            paragraphs.append("\n".join(buffer).strip())
            buffer = []
    if buffer:
        paragraphs.append("\n".join(buffer).strip())
    return paragraphs


def _pack_paragraphs(paragraphs: list[str], max_chars: int) -> list[list[str]]:
    """Greedily pack whole paragraphs into runs of at most max_chars."""
    packs: list[list[str]] = []
    current: list[str] = []
    current_len = 0
    for para in paragraphs:
        added = len(para) if not current else current_len + 2 + len(para)
        if current and added > max_chars:
            packs.append(current)
            current = [para]
            current_len = len(para)
        else:
            current.append(para)
            current_len = added
    if current:
        packs.append(current)
    return packs
