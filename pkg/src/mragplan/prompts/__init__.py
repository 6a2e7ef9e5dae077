"""Prompt templates (one text asset per prompt) and parsers for their replies."""

from __future__ import annotations

import enum
import json
import re
import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from ..core import RetrievedContext, check_ranks
from ..errors import KeyMissing, ParseFailed, ScoreOutOfRange, ValueNotString

EMPTY_RESULTS_MARKER = "(empty: no image search results)"


class PromptName(str, enum.Enum):
    PLANNER_T = "planner_t"
    GOLD_TRAIN = "gold_train"
    GOLD_WITH_IMG_CTX = "gold_with_img_ctx"
    GOLD_PLAIN = "gold_plain"
    IMAGE_QUERY = "image_query"
    JUDGE = "judge"


@dataclass(frozen=True)
class PromptTemplate:
    name: PromptName
    body: str

    @property
    def required_slots(self) -> frozenset[str]:
        return frozenset(f for _, f, _, _ in string.Formatter().parse(self.body) if f)

    def render(self, **slots: str) -> str:
        missing = self.required_slots - slots.keys()
        if missing:
            raise ValueError(f"{self.name.value}: unbound slots {sorted(missing)}")
        return self.body.format(**{k: slots[k] for k in self.required_slots})


class PromptRegistry(Mapping[PromptName, PromptTemplate]):
    def __init__(self, templates: dict[PromptName, PromptTemplate]) -> None:
        missing = set(PromptName) - templates.keys()
        if missing:
            raise ValueError(f"missing prompt templates: {sorted(m.value for m in missing)}")
        self._templates = dict(templates)

    @classmethod
    def from_directory(cls, directory: str | Path) -> PromptRegistry:
        directory = Path(directory)
        return cls(
            {n: PromptTemplate(n, (directory / f"{n.value}.txt").read_text(encoding="utf-8")) for n in PromptName}
        )

    @classmethod
    def builtin(cls) -> PromptRegistry:
        root = resources.files(__package__)
        return cls({n: PromptTemplate(n, (root / f"{n.value}.txt").read_text(encoding="utf-8")) for n in PromptName})

    def __getitem__(self, name: PromptName) -> PromptTemplate:
        return self._templates[PromptName(name)]

    def __iter__(self):
        return iter(self._templates)

    def __len__(self) -> int:
        return len(self._templates)


@lru_cache(maxsize=1)
def default_registry() -> PromptRegistry:
    return PromptRegistry.builtin()


def _require(**values: str) -> None:
    for name, value in values.items():
        if not isinstance(value, str) or not value.strip():
            raise ValueError(f"{name} must be non-empty")


def render_planner_prompt(question: str, registry: PromptRegistry | None = None) -> str:
    _require(question=question)
    return (registry or default_registry())[PromptName.PLANNER_T].render(text_query=question)


def render_gold_query_training(question: str, answer: str, registry: PromptRegistry | None = None) -> str:
    _require(question=question, answer=answer)
    return (registry or default_registry())[PromptName.GOLD_TRAIN].render(question=question, answer=answer)


def format_image_search_results(contexts: Iterable[RetrievedContext]) -> str:
    contexts = list(contexts)
    check_ranks(contexts, ordered=True)
    if not contexts:
        return EMPTY_RESULTS_MARKER
    return "\n".join(f"Image Title: {c.title}" for c in contexts)


def render_gold_query_with_image_context(
    question: str, contexts: Iterable[RetrievedContext], registry: PromptRegistry | None = None
) -> str:
    _require(question=question)
    block = format_image_search_results(contexts)
    return (registry or default_registry())[PromptName.GOLD_WITH_IMG_CTX].render(
        question=question, image_search_results=block
    )


def render_gold_query_plain(question: str, registry: PromptRegistry | None = None) -> str:
    _require(question=question)
    return (registry or default_registry())[PromptName.GOLD_PLAIN].render(question=question)


def render_image_query_prompt(question: str, gold_query: str, registry: PromptRegistry | None = None) -> str:
    _require(question=question, gold_query=gold_query)
    return (registry or default_registry())[PromptName.IMAGE_QUERY].render(question=question, gold_query=gold_query)


def render_judge_prompt(query: str, reference: str, generated: str, registry: PromptRegistry | None = None) -> str:
    _require(query=query, reference=reference, generated=generated)
    return (registry or default_registry())[PromptName.JUDGE].render(
        query=query, reference_answer=reference, generated_answer=generated
    )


# --- parsing ---------------------------------------------------------------

_decoder = json.JSONDecoder()


def _first_object(text: str) -> dict | None:
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = _decoder.raw_decode(text, pos)
        except (json.JSONDecodeError, RecursionError):
            obj = None
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    return None


def extract_json_object(text: str) -> dict:
    """First JSON object embedded in ``text``; retries once with single quotes as double quotes."""
    if not isinstance(text, str):
        raise ParseFailed("model output is not text")
    obj = _first_object(text)
    if obj is None and "'" in text:
        obj = _first_object(text.replace("'", '"'))
    if obj is None:
        raise ParseFailed("no JSON object found in model output")
    return obj


def parse_json_field(text: str, key: str) -> str:
    obj = extract_json_object(text)
    if key not in obj:
        raise KeyMissing(f"key {key!r} missing from {sorted(obj)}")
    value = obj[key]
    if not isinstance(value, str):
        raise ValueNotString(f"value at {key!r} is {type(value).__name__}")
    return value


_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)")


def parse_judge_score(text: str) -> float:
    """First decimal number in the judge reply, required to lie in [1, 5]."""
    if not isinstance(text, str):
        raise ParseFailed("judge output is not text")
    m = _NUMBER.search(text)
    if m is None:
        raise ParseFailed(f"no score in {text[:40]!r}")
    score = float(m.group())
    if not 1.0 <= score <= 5.0:
        raise ScoreOutOfRange(f"score {score} outside [1, 5]")
    return score
