"""Per-category inference paths: retrieval, gold-query rewriting, answer generation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .backends import (
    DEFAULT_TOP_K,
    IMAGE_TOKEN,
    ChatBackend,
    LatencyRecorder,
    ModelRequest,
    SearchBackend,
    user_message,
)
from .core import Category, RetrievedContext, StageEvent, ToolCallProfile, ToolKind, VqaExample, check_ranks
from .errors import ParseFailed, RewriteFailed
from .prompts import (
    parse_json_field,
    render_gold_query_plain,
    render_gold_query_with_image_context,
)

log = logging.getLogger(__name__)

IMAGE_HEADER = "Image search results"
TEXT_HEADER = "Text search results"
SEARCH_STAGES = ("i2i", "t2t", "t2i")


@dataclass
class Backends:
    """Model and retrieval handles for one run. Each slot may be live or a fixture mock."""

    agent: ChatBackend
    task: ChatBackend
    rewrite: ChatBackend
    judge: ChatBackend
    search: SearchBackend

    @property
    def all_mock(self) -> bool:
        return all(getattr(b, "is_mock", False) for b in (self.agent, self.task, self.rewrite, self.judge, self.search))


@dataclass
class ExecutorConfig:
    top_k_image: int = DEFAULT_TOP_K
    top_k_text: int = DEFAULT_TOP_K
    rewrite_attempts: int = 2
    max_answer_tokens: int = 512
    clock: Callable[[], float] = field(default=time.perf_counter, repr=False)


@dataclass
class PipelineResult:
    example_id: str
    category: Category
    answer: str
    contexts_used: list[RetrievedContext]
    gold_query_used: str | None
    tool_calls: ToolCallProfile
    measured_seconds: dict[str, float]
    trace: list[StageEvent]
    flags: list[str] = field(default_factory=list)

    def search_seconds(self) -> float:
        return sum(self.measured_seconds.get(s, 0.0) for s in SEARCH_STAGES)

    def stage_order(self) -> list[str]:
        return [e.stage for e in self.trace]

    def to_dict(self) -> dict[str, Any]:
        return {
            "example_id": self.example_id,
            "category": self.category.code,
            "answer": self.answer,
            "contexts_used": [c.to_dict() for c in self.contexts_used],
            "gold_query_used": self.gold_query_used,
            "tool_calls": self.tool_calls.to_dict(),
            "measured_seconds": self.measured_seconds,
            "trace": [e.to_dict() for e in self.trace],
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PipelineResult:
        trace = []
        for e in d.get("trace", []):
            e = dict(e)
            stage, seconds = e.pop("stage"), float(e.pop("seconds"))
            trace.append(StageEvent(stage, seconds, e))
        return cls(
            example_id=d["example_id"],
            category=Category.from_code(d["category"]),
            answer=d["answer"],
            contexts_used=[RetrievedContext.from_dict(c) for c in d.get("contexts_used", [])],
            gold_query_used=d.get("gold_query_used"),
            tool_calls=ToolCallProfile.from_dict(d["tool_calls"]),
            measured_seconds={k: float(v) for k, v in d.get("measured_seconds", {}).items()},
            trace=trace,
            flags=list(d.get("flags", [])),
        )


def assemble_context_block(contexts: Iterable[RetrievedContext], label: str) -> str:
    contexts = sorted(contexts, key=lambda c: c.rank)
    check_ranks(contexts)
    lines = [f"{label}:"]
    if not contexts:
        lines.append("(none)")
    lines.extend(f"[{c.rank}] {c.title} — {c.snippet}" for c in contexts)
    return "\n".join(lines)


def build_answer_prompt(question: str, blocks: Iterable[str] = (), *, with_image: bool = True) -> str:
    parts = [IMAGE_TOKEN] if with_image else []
    parts.extend(blocks)
    parts.append(question)
    return "\n\n".join(parts)


class _Run:
    """Mutable bookkeeping for one execution."""

    def __init__(self, example: VqaExample, config: ExecutorConfig, recorder: LatencyRecorder | None) -> None:
        self.example = example
        self.config = config
        self.recorder = recorder
        self.trace: list[StageEvent] = []
        self.seconds: dict[str, float] = {}
        self.profile = ToolCallProfile()
        self.flags: list[str] = []

    def event(self, stage: str, seconds: float, **detail: Any) -> None:
        self.trace.append(StageEvent(stage, seconds, detail))
        self.seconds[stage] = self.seconds.get(stage, 0.0) + seconds

    def search(self, tool: ToolKind, fn: Callable[[], list[RetrievedContext]]) -> list[RetrievedContext]:
        start = self.config.clock()
        hits = fn()
        elapsed = max(0.0, self.config.clock() - start)
        self.event(tool.value, elapsed, hits=len(hits))
        self.profile = self.profile + ToolCallProfile(**{f"{tool.value}_count": 1})
        if self.recorder is not None:
            self.recorder.record(tool, elapsed)
        return hits


def rewrite_gold_query(
    rewriter: ChatBackend,
    example: VqaExample,
    image_contexts: list[RetrievedContext] | None,
    *,
    attempts: int = 2,
) -> tuple[str, float]:
    """Inference-time gold query; uses image search results when given. Returns (query, seconds)."""
    if image_contexts is None:
        prompt = render_gold_query_plain(example.question)
    else:
        prompt = render_gold_query_with_image_context(example.question, image_contexts)
    elapsed = 0.0
    last: Exception | None = None
    for attempt in range(1, attempts + 1):
        key = f"rewrite:{example.id}" + ("" if attempt == 1 else f"@{attempt}")
        reply = rewriter.chat(ModelRequest((user_message(prompt, [example.image]),), key=key))
        elapsed += reply.latency_seconds
        try:
            gold = parse_json_field(reply.text, "gold_query").strip()
        except ParseFailed as exc:
            last = exc
            continue
        if gold:
            return gold, elapsed
        last = ParseFailed("empty gold_query")
    raise RewriteFailed(f"{example.id}: gold query unusable after {attempts} attempts: {last}")


def execute(
    example: VqaExample,
    category: Category,
    backends: Backends,
    config: ExecutorConfig | None = None,
    recorder: LatencyRecorder | None = None,
) -> PipelineResult:
    """Run the inference path for ``category``.

    A rewrite that cannot be parsed degrades the path (text retrieval is dropped)
    and sets the ``REWRITE_FAILED`` flag instead of aborting.
    """
    config = config or ExecutorConfig()
    if not example.question or not example.image:
        raise ValueError(f"{example.id}: question and image are required")
    category = Category(category)
    run = _Run(example, config, recorder)
    search = backends.search

    image_hits: list[RetrievedContext] = []
    text_hits: list[RetrievedContext] = []
    gold: str | None = None
    use_image = category in (Category.IMAGE_MRAG, Category.BOTH_MRAG)
    use_text = category in (Category.TEXT_MRAG, Category.BOTH_MRAG)

    if use_image:
        image_hits = run.search(
            ToolKind.I2I, lambda: search.search_image(example.image, config.top_k_image, key=example.id)
        )

    if use_text:
        run.profile = run.profile + ToolCallProfile(rewrite_calls=1)
        try:
            gold, secs = rewrite_gold_query(
                backends.rewrite, example, image_hits if use_image else None, attempts=config.rewrite_attempts
            )
            run.event("rewrite", secs, gold_query=gold)
        except RewriteFailed as exc:
            log.warning("%s", exc)
            run.flags.append("REWRITE_FAILED")
            run.event("rewrite", 0.0, error="REWRITE_FAILED")
            gold = None

    if gold is not None:
        q = gold
        text_hits = run.search(ToolKind.T2T, lambda: search.search_text(q, config.top_k_text, key=example.id))

    blocks = []
    if use_image:
        blocks.append(assemble_context_block(image_hits, IMAGE_HEADER))
    if gold is not None:
        blocks.append(assemble_context_block(text_hits, TEXT_HEADER))
    prompt = build_answer_prompt(example.question, blocks)
    reply = backends.task.chat(
        ModelRequest(
            (user_message(prompt, [example.image]),),
            max_output_tokens=config.max_answer_tokens,
            key=f"answer:{example.id}",
        )
    )
    run.profile = run.profile + ToolCallProfile(task_model_calls=1)
    run.event("answer", reply.latency_seconds)

    return PipelineResult(
        example_id=example.id,
        category=category,
        answer=reply.text.strip(),
        contexts_used=image_hits + text_hits,
        gold_query_used=gold,
        tool_calls=run.profile,
        measured_seconds=run.seconds,
        trace=run.trace,
        flags=run.flags,
    )
