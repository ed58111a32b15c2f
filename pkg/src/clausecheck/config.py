"""Flat key-value configuration.

The config file is a plain text document of ``key = value`` lines with
``#`` comments; keys are dotted (``llm.provider``, ``sampling.qa_samples``).
Credentials never appear in the file, only the names of the environment
variables that hold them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .embedding import EmbeddingProviderConfig
from .hnsw import HnswParams
from .llm import LlmProviderConfig
from .models import Metric, RetrievalConfig, SamplingConfig


def parse_flat(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _as_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass
class Settings:
    """Typed view over the flat key-value mapping, with defaults applied."""

    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "Settings":
        return cls(values=parse_flat(text))

    def merged(self, overrides: dict[str, str]) -> "Settings":
        merged = dict(self.values)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return Settings(values=merged)

    def get(self, key: str, default: str = "") -> str:
        return self.values.get(key, default)

    def embedding_config(self) -> EmbeddingProviderConfig:
        kind = self.get("embedding.provider", "deterministic")
        kind = {"remote": "remote", "deterministic": "deterministic"}.get(kind, kind)
        return EmbeddingProviderConfig(
            provider_kind=kind,
            model_name=self.get("embedding.model", "hash-v1"),
            dim=int(self.get("embedding.dim", "1536")),
            endpoint=self.get("embedding.endpoint", ""),
            api_key_env=self.get(
                "embedding.api_key_env", "CLAUSECHECK_EMBED_API_KEY"
            ),
        )

    def llm_config(self) -> LlmProviderConfig:
        kind = self.get("llm.provider", "mock")
        if kind == "remote":
            kind = "remote_chat"
        return LlmProviderConfig(
            provider_kind=kind,
            endpoint=self.get("llm.endpoint", ""),
            model_id=self.get("llm.model", ""),
            api_key_env=self.get("llm.api_key_env", "CLAUSECHECK_LLM_API_KEY"),
            timeout_s=float(self.get("llm.timeout_s", "60")),
            max_retries=int(self.get("llm.max_retries", "2")),
            in_flight_cap=int(self.get("llm.in_flight_cap", "4")),
            mock_script=self.get("llm.mock_script", ""),
        )

    def sampling_config(self) -> SamplingConfig:
        return SamplingConfig(
            n_qa_samples=int(self.get("sampling.qa_samples", "5")),
            n_vote_samples=int(self.get("sampling.vote_samples", "5")),
            temperature=float(self.get("sampling.temperature", "0.3")),
        )

    def retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(
            k_clauses=int(self.get("retrieval.clauses", "5")),
            k_pairs=int(self.get("retrieval.pairs", "3")),
            metric=Metric(self.get("retrieval.metric", "euclidean")),
        )

    def hnsw_params(self) -> HnswParams:
        raw_ml = self.get("index.level_multiplier", "")
        return HnswParams(
            max_degree=int(self.get("index.max_degree", "48")),
            ef_search=int(self.get("index.ef_search", "500")),
            ef_construction=int(self.get("index.ef_construction", "200")),
            level_multiplier=float(raw_ml) if raw_ml else None,
        )

    def always_run_selection(self) -> bool:
        return _as_bool(self.get("pipeline.always_run_selection", "false"))

    def resample_unparseable(self) -> bool:
        return _as_bool(self.get("pipeline.resample_unparseable", "true"))

    def embed_headings(self) -> bool:
        return _as_bool(self.get("embedding.embed_headings", "true"))
