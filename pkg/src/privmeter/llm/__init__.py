"""Chat-model backends, prompt templates, and completion parsing."""

from .backend import (
    Backend,
    BackendError,
    CallMeta,
    ChatMessage,
    CompletionParams,
    FixtureMissError,
    HttpChatBackend,
    ScriptedBackend,
    TransportError,
    user_content_digest,
)
from .extract import (
    ExtractionError,
    NumericBoundsError,
    NumericParseError,
    extract_list,
    extract_tagged,
    parse_numeric,
)
from .templates import TEMPLATE_IDS, PromptError, PromptTemplate, load_template, render_prompt

__all__ = [
    "Backend",
    "BackendError",
    "CallMeta",
    "ChatMessage",
    "CompletionParams",
    "FixtureMissError",
    "HttpChatBackend",
    "ScriptedBackend",
    "TransportError",
    "user_content_digest",
    "ExtractionError",
    "NumericBoundsError",
    "NumericParseError",
    "extract_list",
    "extract_tagged",
    "parse_numeric",
    "TEMPLATE_IDS",
    "PromptError",
    "PromptTemplate",
    "load_template",
    "render_prompt",
]
