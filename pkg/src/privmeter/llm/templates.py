"""Prompt templates and rendering.

Template bodies are plain-text data files shipped with the package, one per
template id, with ``{placeholder}`` substitution points and an optional
``<examples>`` marker where few-shot demonstrations get spliced in.
Demonstrations live next to each body as a JSON list of preformatted
exchange blocks.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Tuple

from .backend import ChatMessage

__all__ = ["TEMPLATE_IDS", "PromptTemplate", "PromptError", "load_template", "render_prompt"]

TEMPLATE_IDS = (
    "disclosure_selection",
    "probability_ordering",
    "conditional_dependencies",
    "population_query",
    "probability_query",
    "query_estimation",
    "generalization_subquery",
    "discrete_subquery",
    "evaluate_answer",
    "simplify_query",
    "baseline_few_shot",
    "baseline_cot",
    "baseline_pot",
)

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")
_EXAMPLES_MARK = "<examples>"


class PromptError(Exception):
    """Template missing, or a placeholder left unbound at render time."""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    demonstrations: Tuple[str, ...] = ()

    def placeholders(self) -> set:
        return set(_PLACEHOLDER.findall(self.body))


def load_template(template_id: str) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise PromptError(f"unknown template id {template_id!r}")
    root = resources.files(__package__) / "prompts"
    body = (root / f"{template_id}.txt").read_text(encoding="utf-8")
    demos_path = root / f"{template_id}.examples.json"
    demos: Tuple[str, ...] = ()
    try:
        demos = tuple(json.loads(demos_path.read_text(encoding="utf-8")))
    except FileNotFoundError:
        pass
    return PromptTemplate(template_id, body, demos)


def render_prompt(
    template: PromptTemplate,
    bindings: Mapping[str, str],
    demonstrations: int = 3,
):
    """Render a template into chat messages.

    Substitution is literal (no recursive expansion). The ``<examples>``
    marker is replaced by the first ``demonstrations`` demo blocks, or elided
    entirely when there are none to show.
    """
    body = template.body
    if _EXAMPLES_MARK in body:
        shown = template.demonstrations[: max(0, demonstrations)]
        block = "\n\n".join(shown)
        body = body.replace(_EXAMPLES_MARK, block)

    unbound = []

    def sub(match):
        name = match.group(1)
        if name not in bindings:
            unbound.append(name)
            return match.group(0)
        return str(bindings[name])

    rendered = _PLACEHOLDER.sub(sub, body)
    if unbound:
        raise PromptError(
            f"template {template.template_id!r}: unbound placeholder(s) {sorted(set(unbound))}"
        )
    # Collapse the blank lines left behind by an elided examples block.
    rendered = re.sub(r"\n{3,}", "\n\n", rendered).strip() + "\n"
    return [ChatMessage(role="user", content=rendered)]
