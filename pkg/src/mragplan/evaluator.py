"""Answer scoring (LLM judge, token accuracy), search-time accounting and report aggregation."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .backends import ChatBackend, LatencyModel, ModelRequest, user_message
from .core import Category, ToolCallProfile
from .errors import JudgeFailed, MisalignedScores, ParseFailed
from .prompts import render_judge_prompt, parse_judge_score


def scale_affine(score: float) -> float:
    """Map the 1-5 rubric onto 0-100 with 1 -> 0 and 5 -> 100."""
    return (score - 1.0) * 25.0


def scale_times_20(score: float) -> float:
    return score * 20.0


SCALERS: dict[str, Callable[[float], float]] = {"affine": scale_affine, "x20": scale_times_20}


def judge_raw_score(
    judge: ChatBackend,
    query: str,
    reference: str,
    generated: str,
    *,
    key: str | None = None,
    max_attempts: int = 2,
) -> float:
    """Raw 1-5 judge score, re-asking once when the reply does not parse."""
    prompt = render_judge_prompt(query, reference, generated)
    last: Exception | None = None
    for attempt in range(1, max_attempts + 1):
        req_key = key if (key is None or attempt == 1) else f"{key}@{attempt}"
        reply = judge.chat(ModelRequest((user_message(prompt),), temperature=0.0, max_output_tokens=16, key=req_key))
        try:
            return parse_judge_score(reply.text)
        except ParseFailed as exc:
            last = exc
    raise JudgeFailed(f"judge reply unusable after {max_attempts} attempts: {last}") from last


def judge_answer(
    judge: ChatBackend,
    query: str,
    reference: str,
    generated: str,
    *,
    key: str | None = None,
    scale: str = "affine",
) -> float:
    return SCALERS[scale](judge_raw_score(judge, query, reference, generated, key=key))


_WS = re.compile(r"\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase, drop Unicode punctuation, split on whitespace."""
    stripped = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text.lower())
    return [t for t in _WS.split(stripped) if t]


def token_accuracy(generated: str, reference: str, tokenizer: Callable[[str], list[str]] = tokenize) -> float:
    """Fraction of reference tokens found in the generated answer (multiset recall)."""
    ref = Counter(tokenizer(reference))
    if not ref:
        raise ValueError("reference has no tokens")
    hit = ref & Counter(tokenizer(generated))
    return sum(hit.values()) / sum(ref.values())


def modeled_search_time(totals: ToolCallProfile, latency: LatencyModel | None = None) -> float:
    latency = latency or LatencyModel()
    return (
        totals.i2i_count * latency.i2i_seconds
        + totals.t2t_count * latency.t2t_seconds
        + totals.t2i_count * latency.t2i_seconds
    )


@dataclass(frozen=True)
class ItemScore:
    llm_score: float
    token_accuracy: float

    def to_dict(self) -> dict[str, float]:
        return {"llm_score": self.llm_score, "token_accuracy": self.token_accuracy}


@dataclass
class Report:
    dataset_id: str
    n_items: int
    mean_llm_score: float
    mean_token_accuracy: float
    category_ratios: dict[str, float]
    tool_totals: ToolCallProfile
    modeled_search_seconds: float
    measured_search_seconds: float
    agent_infer_seconds: float
    category_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_id": self.dataset_id,
            "n_items": self.n_items,
            "mean_llm_score": self.mean_llm_score,
            "mean_token_accuracy": self.mean_token_accuracy,
            "category_ratios": self.category_ratios,
            "category_counts": self.category_counts,
            "tool_totals": self.tool_totals.to_dict(),
            "modeled_search_seconds": self.modeled_search_seconds,
            "measured_search_seconds": self.measured_search_seconds,
            "agent_infer_seconds": self.agent_infer_seconds,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Report:
        return cls(
            dataset_id=d["dataset_id"],
            n_items=int(d["n_items"]),
            mean_llm_score=float(d["mean_llm_score"]),
            mean_token_accuracy=float(d["mean_token_accuracy"]),
            category_ratios={k: float(v) for k, v in d["category_ratios"].items()},
            tool_totals=ToolCallProfile.from_dict(d["tool_totals"]),
            modeled_search_seconds=float(d["modeled_search_seconds"]),
            measured_search_seconds=float(d["measured_search_seconds"]),
            agent_infer_seconds=float(d["agent_infer_seconds"]),
            category_counts={k: int(v) for k, v in d.get("category_counts", {}).items()},
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_markdown(self) -> str:
        r = self.category_ratios
        head = "| Dataset | N | LLM Eval | Token Acc. | % No | % +k_i | % +k_t | % +k_{i,t} | Search time (s) | Measured search (s) | Agent infer. (s) |"
        rule = "|" + "---|" * 11
        row = (
            f"| {self.dataset_id} | {self.n_items} | {self.mean_llm_score:.2f} | {self.mean_token_accuracy:.4f} "
            f"| {r['c1']:.1f} | {r['c3']:.1f} | {r['c2']:.1f} | {r['c4']:.1f} "
            f"| {self.modeled_search_seconds:.1f} | {self.measured_search_seconds:.1f} | {self.agent_infer_seconds:.1f} |"
        )
        t = self.tool_totals
        tools = (
            f"Tool calls: i2i={t.i2i_count}, t2t={t.t2t_count}, t2i={t.t2i_count}, "
            f"rewrite={t.rewrite_calls}, task={t.task_model_calls}"
        )
        return "\n".join([f"# Report: {self.dataset_id}", "", head, rule, row, "", tools, ""])


def category_ratios(categories: Iterable[Category]) -> dict[str, float]:
    counts = Counter(Category(c) for c in categories)
    n = sum(counts.values())
    if n == 0:
        raise ValueError("no categories to summarize")
    return {c.code: counts[c] / n * 100.0 for c in Category}


def aggregate(
    results: Iterable[Any],
    scores: Mapping[str, ItemScore],
    latency: LatencyModel | None = None,
    *,
    dataset_id: str = "dataset",
) -> Report:
    """Fold per-item pipeline results and scores into a :class:`Report`.

    ``results`` are :class:`~mragplan.executor.PipelineResult` objects.
    """
    latency = latency or LatencyModel()
    results = sorted(results, key=lambda r: r.example_id)
    if not results:
        raise ValueError("results must be non-empty")
    missing = [r.example_id for r in results if r.example_id not in scores]
    if missing:
        raise MisalignedScores(f"{len(missing)} results lack scores, e.g. {missing[:3]}")
    n = len(results)
    item_scores = [scores[r.example_id] for r in results]
    totals = ToolCallProfile.total(r.tool_calls for r in results)
    counts = Counter(r.category for r in results)
    measured = math.fsum(r.search_seconds() for r in results)
    return Report(
        dataset_id=dataset_id,
        n_items=n,
        mean_llm_score=math.fsum(s.llm_score for s in item_scores) / n,
        mean_token_accuracy=math.fsum(s.token_accuracy for s in item_scores) / n,
        category_ratios=category_ratios(r.category for r in results),
        category_counts={c.code: counts[c] for c in Category},
        tool_totals=totals,
        modeled_search_seconds=modeled_search_time(totals, latency),
        measured_search_seconds=measured,
        agent_infer_seconds=n * latency.agent_infer_seconds,
    )



def merge_reports(a: Report, b: Report, latency: LatencyModel | None = None) -> Report:
    """Combine reports over disjoint batches; equals aggregating the union."""
    latency = latency or LatencyModel()
    n = a.n_items + b.n_items
    counts = {c.code: a.category_counts.get(c.code, 0) + b.category_counts.get(c.code, 0) for c in Category}
    totals = a.tool_totals + b.tool_totals
    return Report(
        dataset_id=a.dataset_id,
        n_items=n,
        mean_llm_score=math.fsum([a.mean_llm_score * a.n_items, b.mean_llm_score * b.n_items]) / n,
        mean_token_accuracy=math.fsum([a.mean_token_accuracy * a.n_items, b.mean_token_accuracy * b.n_items]) / n,
        category_ratios={k: v / n * 100.0 for k, v in counts.items()},
        category_counts=counts,
        tool_totals=totals,
        modeled_search_seconds=modeled_search_time(totals, latency),
        measured_search_seconds=a.measured_search_seconds + b.measured_search_seconds,
        agent_infer_seconds=n * latency.agent_infer_seconds,
    )
