"""privmeter: estimate how many people match the personal details in a text.

The pipeline factorizes a document's disclosures into a network of
conditional-probability queries, estimates each one with a chat-model
backend, and recombines the answers into an integer k — a privacy meter
reading: k = 1 means uniquely identifying, large k means well hidden.
"""

from .core import (
    Answer,
    BayesNetwork,
    Disclosure,
    DisclosureCategory,
    DocumentContext,
    EstimateResult,
    QueryNode,
    QuerySemantics,
    RunConfig,
    normalize_k,
    validate_network,
)
from .pipeline import PipelineError, run, run_baseline

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "BayesNetwork",
    "Disclosure",
    "DisclosureCategory",
    "DocumentContext",
    "EstimateResult",
    "QueryNode",
    "QuerySemantics",
    "RunConfig",
    "normalize_k",
    "validate_network",
    "PipelineError",
    "run",
    "run_baseline",
    "__version__",
]
