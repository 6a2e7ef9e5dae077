"""Category prediction with the planning agent."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Any

from .backends import ChatBackend, ModelRequest, user_message
from .core import Category, VqaExample, category_from_letter
from .errors import MalformedChoice
from .prompts import render_planner_prompt

log = logging.getLogger(__name__)

FALLBACK_CATEGORY = Category.BOTH_MRAG

_OPTION_TOKEN = re.compile(r"(?<![A-Za-z])([ABCD])(?![A-Za-z])")


@dataclass(frozen=True)
class PlannerConfig:
    max_attempts: int = 2
    temperature: float = 0.0
    max_output_tokens: int = 8


@dataclass(frozen=True)
class PlanDecision:
    category: Category
    raw_output: str
    used_fallback: bool
    attempts: int
    latency_seconds: float

    def to_dict(self, example_id: str | None = None) -> dict[str, Any]:
        d: dict[str, Any] = {} if example_id is None else {"id": example_id}
        d.update(
            category=self.category.code,
            raw_output=self.raw_output,
            used_fallback=self.used_fallback,
            attempts=self.attempts,
            latency_seconds=self.latency_seconds,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PlanDecision:
        return cls(
            category=Category.from_code(d["category"]),
            raw_output=d.get("raw_output", ""),
            used_fallback=bool(d.get("used_fallback", False)),
            attempts=int(d.get("attempts", 1)),
            latency_seconds=float(d.get("latency_seconds", 0.0)),
        )


def parse_plan_output(text: str) -> Category:
    """Category from a free-form agent reply.

    The first standalone capital A-D token wins ("I think B is right" reads as B,
    "Answer: C" as C); otherwise the strict single-letter parse applies.
    """
    m = _OPTION_TOKEN.search(text or "")
    if m is not None:
        return category_from_letter(m.group(1))
    try:
        return category_from_letter(text)
    except ValueError as exc:
        raise MalformedChoice("empty planner output") from exc


def plan(query: VqaExample, agent: ChatBackend, config: PlannerConfig | None = None) -> PlanDecision:
    config = config or PlannerConfig()
    if not query.question:
        raise ValueError("question must be non-empty")
    if not query.image:
        raise ValueError("image reference is required")
    prompt = render_planner_prompt(query.question)
    latency = 0.0
    raw = ""
    for attempt in range(1, config.max_attempts + 1):
        key = f"plan:{query.id}" + ("" if attempt == 1 else f"@{attempt}")
        reply = agent.chat(
            ModelRequest(
                (user_message(prompt, [query.image]),),
                temperature=config.temperature,
                max_output_tokens=config.max_output_tokens,
                key=key,
            )
        )
        latency += reply.latency_seconds
        raw = reply.text
        try:
            category = parse_plan_output(raw)
        except MalformedChoice:
            continue
        return PlanDecision(category, raw, False, attempt, latency)
    log.warning("%s: planner output %r unparseable, falling back to %s", query.id, raw, FALLBACK_CATEGORY.code)
    return PlanDecision(FALLBACK_CATEGORY, raw, True, config.max_attempts, latency)
