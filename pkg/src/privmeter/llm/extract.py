"""Tag-based extraction from chat-model completions.

Backends are instructed to wrap machine-readable output in lowercase tags
(``<answer>``, ``<query>``, ``<list>``, ``<math>``, ``<score>``, ``<type>``).
Models echo their instructions often enough that only the first well-formed
occurrence of a tag counts.
"""

from __future__ import annotations

import math
import re

from ..core import PERCENTAGE, POPULATION

__all__ = [
    "ExtractionError",
    "NumericParseError",
    "NumericBoundsError",
    "extract_tagged",
    "extract_list",
    "parse_numeric",
]


class ExtractionError(Exception):
    """Requested tag absent or unclosed in the completion."""


class NumericParseError(Exception):
    """Completion text is not a number."""


class NumericBoundsError(Exception):
    """Number parsed but violates the bounds for its query kind."""


def extract_tagged(text: str, tag: str) -> str:
    """Content of the first well-formed ``<tag>...</tag>`` pair, trimmed."""
    open_tag, close_tag = f"<{tag}>", f"</{tag}>"
    start = text.find(open_tag)
    if start < 0:
        raise ExtractionError(f"no <{tag}> tag in completion")
    end = text.find(close_tag, start + len(open_tag))
    if end < 0:
        raise ExtractionError(f"<{tag}> tag is not closed")
    return text[start + len(open_tag) : end].strip()


_ITEM = re.compile(r"<answer>(.*?)</answer>(?:\s*<type>(.*?)</type>)?", re.DOTALL)


def extract_list(text: str):
    """Ordered (answer, type) pairs from the first ``<list>`` block.

    The type element is optional per item; a missing one yields None. An
    empty list block is a valid, empty result.
    """
    block = extract_tagged(text, "list")
    out = []
    for m in _ITEM.finditer(block):
        answer = m.group(1).strip()
        kind = m.group(2).strip() if m.group(2) is not None else None
        out.append((answer, kind))
    return out


_STRIP = re.compile(r"[,\s$€£]")


def parse_numeric(text: str, kind: str) -> float:
    """Parse a model-reported number and enforce the bounds for its kind.

    Commas, currency symbols and whitespace are stripped. A trailing percent
    sign divides by 100: models emit "25%" despite being told to answer with
    a decimal, and silently repairing that beats failing the run. Bounds
    violations raise separately from parse failures so callers can decide to
    re-prompt.
    """
    cleaned = _STRIP.sub("", text)
    percent = cleaned.endswith("%")
    if percent:
        cleaned = cleaned[:-1]
    try:
        value = float(cleaned)
    except ValueError:
        raise NumericParseError(f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise NumericParseError(f"non-finite number: {text!r}")
    if percent:
        value /= 100.0
    if kind == PERCENTAGE:
        if not (0 < value <= 1):
            raise NumericBoundsError(f"percentage {value} outside (0, 1]")
    elif kind == POPULATION:
        if value < 1:
            raise NumericBoundsError(f"population {value} below 1")
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return value
