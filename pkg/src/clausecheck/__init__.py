"""Knowledge-augmented contract clause risk identification.

Builds vector knowledge bases out of contract clauses and expert
clause-review pairs, retrieves both for a given checkpoint, and resolves a
contradict / entail / not-found verdict through sampled prompting and
majority voting. Ships as a core library, a FastAPI service, and a CLI
that drives the service.
"""

__version__ = "0.1.0"

from .models import (  # noqa: F401
    Checkpoint,
    ClauseChunk,
    EmbeddingVector,
    ExpertPair,
    IdentificationResult,
    Metric,
    RetrievalConfig,
    SamplingConfig,
    Suggestion,
    SuggestionSet,
    Verdict,
    validate,
)
