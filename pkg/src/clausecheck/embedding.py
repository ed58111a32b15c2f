"""Text embedding providers and vector similarity operations.

Two providers are available: a remote JSON-over-HTTPS endpoint (OpenAI-style
request/response shape) and a deterministic local embedder used for tests and
offline runs. The local embedder feature-hashes whitespace tokens into signed
buckets, so identical input always yields an identical vector on any machine.

All vectors handed to the store are L2-normalized. Under normalization,
descending cosine order and ascending Euclidean order agree exactly
(d^2 = 2 - 2*cos), which is what lets the store sort one way regardless of
the configured metric.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
from dataclasses import dataclass

import numpy as np

from .models import EmbeddingVector, Metric

logger = logging.getLogger(__name__)

REMOTE_BATCH_SIZE = 64
DEFAULT_IN_FLIGHT_CAP = 4


class EmbeddingError(Exception):
    """Embedding failed after the configured number of attempts."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    provider_kind: str = "deterministic"  # "deterministic" or "remote"
    model_name: str = "hash-v1"
    dim: int = 1536
    endpoint: str = ""
    api_key_env: str = "CLAUSECHECK_EMBED_API_KEY"
    max_retries: int = 2
    in_flight_cap: int = DEFAULT_IN_FLIGHT_CAP

    def to_record(self) -> dict:
        return {
            "provider_kind": self.provider_kind,
            "model_name": self.model_name,
            "dim": self.dim,
            "endpoint": self.endpoint,
            "api_key_env": self.api_key_env,
        }

    @classmethod
    def from_record(cls, record: dict) -> "EmbeddingProviderConfig":
        return cls(
            provider_kind=record.get("provider_kind", "deterministic"),
            model_name=record.get("model_name", "hash-v1"),
            dim=int(record.get("dim", 1536)),
            endpoint=record.get("endpoint", ""),
            api_key_env=record.get("api_key_env", "CLAUSECHECK_EMBED_API_KEY"),
        )


@dataclass(frozen=True)
class SimilarityScore:
    """A raw metric value: cosine in [-1, 1], or Euclidean distance >= 0."""

    value: float
    metric: Metric

    def to_record(self) -> dict:
        return {"value": self.value, "metric": self.metric.value}

    @classmethod
    def from_record(cls, record: dict) -> "SimilarityScore":
        return cls(value=record["value"], metric=Metric(record["metric"]))


def _require_text(text: str) -> None:
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")


_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Function words carry no retrieval signal but dominate raw token overlap
# between any two contract clauses; they are dropped before hashing.
_STOPWORDS = frozenset(
    """a above after all an and any are as at be been before below between by
    during each for from had has have if in into is it its may no not of on
    only or other per shall such than that the then these this those to under
    upon was were when where which who whom whose will with within without
    """.split()
)


class DeterministicEmbedder:
    """Pure-function embedder: feature hashing over normalized tokens.

    Tokens are lowercased alphanumeric runs with function words removed;
    unigrams and adjacent bigrams are hashed with a fixed 64-bit hash keyed
    by the model name, each hash picking a bucket and a sign, and the
    accumulated vector is L2-normalized. Bigrams let shared phrases (the
    strongest signal between a requirement and a clause) outweigh incidental
    single-word overlap. No randomness, no state, no network.
    """

    provider_kind = "deterministic"

    def __init__(self, dim: int = 1536, model_name: str = "hash-v1"):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.model_name = model_name

    def embed_text(self, text: str) -> EmbeddingVector:
        _require_text(text)
        vec = np.zeros(self.dim, dtype=np.float64)
        prefix = self.model_name.encode("utf-8") + b"\x00"
        tokens = [
            t for t in _TOKEN_RE.findall(text.lower()) if t not in _STOPWORDS
        ]
        features = tokens + [
            a + "\x1f" + b for a, b in zip(tokens, tokens[1:])
        ]
        for feature in features:
            digest = hashlib.blake2b(
                prefix + feature.encode("utf-8"), digest_size=8
            ).digest()
            h = int.from_bytes(digest, "big")
            bucket = h % self.dim
            sign = 1.0 if (h >> 63) & 1 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # nothing but function words or punctuation; fall back to a
            # fixed unit basis component so the vector stays usable
            vec[0] = 1.0
            norm = 1.0
        vec /= norm
        return EmbeddingVector.of(vec)

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self.embed_text(t) for t in texts]


class RemoteEmbedder:
    """Client for a JSON embedding endpoint.

    Request: {"model": ..., "input": [texts]}
    Response: {"data": [{"index": i, "embedding": [floats]}, ...]}

    The credential is read from the configured environment variable at call
    time and sent as a bearer token; it is never logged.
    """

    provider_kind = "remote"

    def __init__(self, config: EmbeddingProviderConfig, transport=None):
        import httpx

        if not config.endpoint:
            raise ValueError("remote embedding provider requires an endpoint")
        self.dim = config.dim
        self.model_name = config.model_name
        self._config = config
        self._semaphore = threading.Semaphore(max(1, config.in_flight_cap))
        self._client = httpx.Client(timeout=60.0, transport=transport)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self._config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        import httpx

        payload = {"model": self.model_name, "input": texts}
        attempts = 0
        last_error: Exception | None = None
        while attempts <= self._config.max_retries:
            attempts += 1
            try:
                with self._semaphore:
                    response = self._client.post(
                        self._config.endpoint, json=payload, headers=self._headers()
                    )
                response.raise_for_status()
                body = response.json()
                break
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
                logger.warning(
                    "embedding request failed (attempt %d/%d)",
                    attempts,
                    self._config.max_retries + 1,
                )
        else:
            raise EmbeddingError(
                f"embedding endpoint unreachable after {attempts} attempts",
                attempts=attempts,
            ) from last_error
        rows = sorted(body["data"], key=lambda item: item["index"])
        if len(rows) != len(texts):
            raise EmbeddingError(
                f"endpoint returned {len(rows)} embeddings for {len(texts)} inputs"
            )
        vectors = []
        for row in rows:
            values = row["embedding"]
            if len(values) != self.dim:
                raise EmbeddingError(
                    f"endpoint returned dim {len(values)}, expected {self.dim}"
                )
            vectors.append(EmbeddingVector.of(values))
        return vectors

    def embed_text(self, text: str) -> EmbeddingVector:
        _require_text(text)
        return self._post_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        for t in texts:
            _require_text(t)
        out: list[EmbeddingVector] = []
        for start in range(0, len(texts), REMOTE_BATCH_SIZE):
            out.extend(self._post_batch(texts[start : start + REMOTE_BATCH_SIZE]))
        return out

    def close(self) -> None:
        self._client.close()


def build_embedder(config: EmbeddingProviderConfig, transport=None):
    if config.provider_kind == "deterministic":
        return DeterministicEmbedder(dim=config.dim, model_name=config.model_name)
    if config.provider_kind == "remote":
        return RemoteEmbedder(config, transport=transport)
    raise ValueError(f"unknown embedding provider kind: {config.provider_kind!r}")


# ---------------------------------------------------------------------------
# Vector operations
# ---------------------------------------------------------------------------


def _as_arrays(a: EmbeddingVector, b: EmbeddingVector) -> tuple[np.ndarray, np.ndarray]:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return (
        np.asarray(a.values, dtype=np.float64),
        np.asarray(b.values, dtype=np.float64),
    )


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> SimilarityScore:
    va, vb = _as_arrays(a, b)
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    value = float(np.dot(va, vb) / (norm_a * norm_b))
    return SimilarityScore(value=value, metric=Metric.COSINE)


def euclidean_distance(a: EmbeddingVector, b: EmbeddingVector) -> SimilarityScore:
    va, vb = _as_arrays(a, b)
    value = float(np.linalg.norm(va - vb))
    return SimilarityScore(value=value, metric=Metric.EUCLIDEAN)


def normalize(v: EmbeddingVector) -> EmbeddingVector:
    arr = np.asarray(v.values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return EmbeddingVector.of(arr / norm)


def distance_to_score(distance: float) -> float:
    """Ranking score for a Euclidean distance between unit vectors.

    s = 1 - d^2/2 equals the cosine of the pair, so sorting scores in
    descending order is correct for both metrics.
    """
    return 1.0 - (distance * distance) / 2.0
