"""Report assembly and rendering.

The JSON document is the contract; markdown is derived from it for humans.
Serialization is canonical (sorted keys, fixed indentation, no timestamps)
so that identical runs produce byte-identical report files.
"""

from __future__ import annotations

import json

from .models import Verdict

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["run_metadata", "results", "summary"],
    "properties": {
        "run_metadata": {
            "type": "object",
            "required": ["tool", "version", "mode", "kb_path"],
            "properties": {
                "tool": {"type": "string"},
                "version": {"type": "string"},
                "mode": {"enum": ["augmented", "standard", "both"]},
                "kb_path": {"type": "string"},
                "seed": {"type": ["integer", "null"]},
            },
        },
        "results": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["checkpoint_id", "mode", "status"],
                "properties": {
                    "checkpoint_id": {"type": "string"},
                    "mode": {"enum": ["augmented", "standard"]},
                    "status": {"enum": ["ok", "error"]},
                    "error": {"type": ["string", "null"]},
                    "error_kind": {"type": ["string", "null"]},
                    "result": {
                        "type": ["object", "null"],
                        "required": [
                            "checkpoint",
                            "retrieved_clauses",
                            "retrieved_pairs",
                            "suggestions",
                            "votes",
                            "final_verdict",
                            "final_explanation",
                            "tie_broken",
                            "prompt_kind",
                            "degraded",
                            "is_risky",
                        ],
                        "properties": {
                            "checkpoint": {
                                "type": "object",
                                "required": ["id", "text"],
                            },
                            "retrieved_clauses": {"type": "array"},
                            "retrieved_pairs": {"type": "array"},
                            "suggestions": {"type": "array"},
                            "votes": {"type": "object"},
                            "final_verdict": {
                                "enum": [v.value for v in Verdict]
                            },
                            "final_explanation": {"type": "string"},
                            "tie_broken": {"type": "boolean"},
                            "prompt_kind": {
                                "enum": ["qa", "standard", "standard_fallback"]
                            },
                            "degraded": {"type": "boolean"},
                            "is_risky": {"type": "boolean"},
                        },
                    },
                },
            },
        },
        "summary": {
            "type": "object",
            "required": ["checkpoints", "results", "risky", "non_risky", "failed"],
        },
    },
}


def build_report(run_metadata: dict, results: list[dict], summary: dict) -> dict:
    return {"run_metadata": run_metadata, "results": results, "summary": summary}


def dumps_canonical(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def to_markdown(report: dict) -> str:
    """Human-readable rendering of a report document."""
    meta = report["run_metadata"]
    summary = report["summary"]
    lines = [
        "# Contract risk identification report",
        "",
        f"- knowledge base: `{meta.get('kb_path', '')}`",
        f"- mode: {meta.get('mode', '')}",
        f"- checkpoints: {summary.get('checkpoints', 0)}",
        f"- risky: {summary.get('risky', 0)}"
        f" / non-risky: {summary.get('non_risky', 0)}"
        f" / failed: {summary.get('failed', 0)}"
        f" / degraded: {summary.get('degraded', 0)}",
        "",
        "| checkpoint | mode | verdict | risky | tie broken |",
        "|---|---|---|---|---|",
    ]
    for entry in report["results"]:
        if entry["status"] != "ok":
            lines.append(
                f"| {entry['checkpoint_id']} | {entry['mode']} | "
                f"error: {entry.get('error', '')} | - | - |"
            )
            continue
        result = entry["result"]
        lines.append(
            f"| {entry['checkpoint_id']} | {entry['mode']} | "
            f"{result['final_verdict']} | "
            f"{'yes' if result['is_risky'] else 'no'} | "
            f"{'yes' if result['tie_broken'] else 'no'} |"
        )
    lines.append("")
    for entry in report["results"]:
        if entry["status"] != "ok":
            continue
        result = entry["result"]
        checkpoint = result["checkpoint"]
        lines.extend(
            [
                f"## {entry['checkpoint_id']} ({entry['mode']})",
                "",
                f"**Checkpoint.** {checkpoint['text']}",
                "",
                f"**Verdict.** {result['final_verdict']}"
                + (" (degraded run)" if result["degraded"] else ""),
                "",
                f"**Explanation.** {result['final_explanation']}",
                "",
            ]
        )
        if result["retrieved_clauses"]:
            lines.append("Retrieved clauses:")
            for clause in result["retrieved_clauses"]:
                lines.append(
                    f"- [{clause['id']}] {clause['clause_type']} "
                    f"(score {clause['score']:.4f}, distance {clause['distance']:.4f})"
                )
            lines.append("")
        if result["retrieved_pairs"]:
            lines.append("Expert pairs consulted:")
            for pair in result["retrieved_pairs"]:
                lines.append(
                    f"- [{pair['id']}] score {pair['score']:.4f}, "
                    f"distance {pair['distance']:.4f}"
                )
            lines.append("")
    return "\n".join(lines)
