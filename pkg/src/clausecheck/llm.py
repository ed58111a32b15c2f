"""Chat-completion providers and independent sampling.

``sample`` draws n completions as n independent requests, never as one
multi-sample call: each draw is a fresh conversation with a single user
message and no history. Failed requests are retried a bounded number of
times, then counted as missing samples; only when every sample fails does
the call raise.

The mock provider replays a script file, keyed by prompt hash or consumed
in sequence, which makes the whole pipeline deterministic in tests and
offline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .prompting import RenderedPrompt

logger = logging.getLogger(__name__)


class ProviderError(Exception):
    pass


class TransientProviderError(ProviderError):
    """A single request failed; the sample may be retried."""


class ProviderUnavailableError(ProviderError):
    """Every sample of a batch failed."""


class MockScriptError(ProviderError):
    """The mock script has no entry for a request; a fixture bug, not retried."""


@dataclass(frozen=True)
class LlmProviderConfig:
    provider_kind: str = "mock"  # "mock" or "remote_chat"
    endpoint: str = ""
    model_id: str = ""  # opaque; identifies the model weights in use
    api_key_env: str = "CLAUSECHECK_LLM_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 2
    in_flight_cap: int = 4
    mock_script: str = ""

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


@dataclass
class CompletionBatch:
    prompt: RenderedPrompt
    outputs: list[str]
    temperature_used: float
    failures: int = 0


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class MockChatProvider:
    """Replays canned outputs from a script.

    Script shape (JSON)::

        {
          "by_prompt": {"<sha256 of prompt text>": [entry, ...]},
          "sequence": [entry, ...]
        }

    Each entry is either an output string or ``{"fail": "message"}``, which
    raises a retryable failure when consumed. A request first consumes from
    its prompt's queue, then from the shared sequence; an empty script is a
    fixture bug and raises immediately.
    """

    concurrency = 1

    def __init__(self, script: dict, max_retries: int = 2, model_id: str = "mock"):
        self.max_retries = max_retries
        self.model_id = model_id
        self._by_prompt = {
            key: list(entries)
            for key, entries in (script.get("by_prompt") or {}).items()
        }
        self._sequence = list(script.get("sequence") or [])
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, max_retries: int = 2) -> "MockChatProvider":
        script = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(script, max_retries=max_retries)

    def complete(self, prompt_text: str, temperature: float) -> str:
        with self._lock:
            key = prompt_hash(prompt_text)
            queue = self._by_prompt.get(key)
            if queue:
                entry = queue.pop(0)
            elif self._sequence:
                entry = self._sequence.pop(0)
            else:
                raise MockScriptError(
                    f"mock script has no entry left for prompt {key[:12]}..."
                )
        if isinstance(entry, dict) and "fail" in entry:
            raise TransientProviderError(str(entry["fail"]))
        return str(entry)


class RemoteChatProvider:
    """Client for a JSON chat-completion endpoint.

    Request: {"model": ..., "messages": [{"role": "user", "content": ...}],
    "temperature": ...}; response: {"choices": [{"message": {"content":
    ...}}]}. The credential comes from the configured environment variable
    and is never logged.
    """

    def __init__(self, config: LlmProviderConfig, transport=None):
        import httpx

        if not config.endpoint:
            raise ValueError("remote chat provider requires an endpoint")
        self._config = config
        self.max_retries = config.max_retries
        self.model_id = config.model_id
        self.concurrency = max(1, config.in_flight_cap)
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)

    def complete(self, prompt_text: str, temperature: float) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self._config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self._config.model_id,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": temperature,
        }
        try:
            response = self._client.post(
                self._config.endpoint, json=payload, headers=headers
            )
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (httpx.TransportError, httpx.HTTPStatusError) as exc:
            raise TransientProviderError(f"chat request failed: {exc}") from exc
        except (KeyError, IndexError, ValueError) as exc:
            raise TransientProviderError(
                f"chat response had an unexpected shape: {exc}"
            ) from exc

    def close(self) -> None:
        self._client.close()


def build_provider(config: LlmProviderConfig, transport=None):
    if config.provider_kind == "mock":
        if not config.mock_script:
            raise ValueError("mock provider requires a mock_script path")
        return MockChatProvider.from_file(
            config.mock_script, max_retries=config.max_retries
        )
    if config.provider_kind == "remote_chat":
        return RemoteChatProvider(config, transport=transport)
    raise ValueError(f"unknown llm provider kind: {config.provider_kind!r}")


def _one_sample(provider, prompt_text: str, temperature: float,
                sample_no: int) -> str | None:
    attempts = provider.max_retries + 1
    for attempt in range(1, attempts + 1):
        try:
            return provider.complete(prompt_text, temperature)
        except TransientProviderError as exc:
            logger.warning(
                "sample %d attempt %d/%d failed: %s", sample_no, attempt, attempts, exc
            )
    return None


def sample(provider, prompt: RenderedPrompt, n: int,
           temperature: float) -> CompletionBatch:
    """Draw n independent completions for one prompt.

    Output order follows the sample index, not completion time. Requests
    run concurrently up to the provider's in-flight cap; the mock provider
    is sequential so scripted order is preserved.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if provider.concurrency > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=provider.concurrency) as pool:
            raw = list(
                pool.map(
                    lambda i: _one_sample(provider, prompt.text, temperature, i),
                    range(n),
                )
            )
    else:
        raw = [_one_sample(provider, prompt.text, temperature, i) for i in range(n)]
    outputs = [r for r in raw if r is not None]
    failures = n - len(outputs)
    if not outputs:
        raise ProviderUnavailableError(
            f"all {n} samples failed; provider unreachable or misconfigured"
        )
    if failures:
        logger.warning("%d of %d samples missing after retries", failures, n)
    return CompletionBatch(
        prompt=prompt,
        outputs=outputs,
        temperature_used=temperature,
        failures=failures,
    )
