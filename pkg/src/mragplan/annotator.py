"""Training-data annotation: query decomposition, correctness probes, labeling, balancing."""

from __future__ import annotations

import logging
import random
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .backends import ChatBackend, ModelRequest, user_message
from .core import (
    AnnotationLabel,
    Category,
    ExclusionReason,
    ProbeOutcome,
    VqaExample,
    letter_of,
)
from .errors import BackendError, DecompositionFailed, JudgeFailed, ParseFailed
from .evaluator import judge_raw_score
from .executor import Backends, build_answer_prompt
from .prompts import (
    parse_json_field,
    render_gold_query_training,
    render_image_query_prompt,
    render_planner_prompt,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 4.0


@dataclass(frozen=True)
class DecompositionRecord:
    example_id: str
    gold_query: str
    image_query: str
    image_entity: str

    def __post_init__(self) -> None:
        for name in ("gold_query", "image_query", "image_entity"):
            if not getattr(self, name).strip():
                raise ValueError(f"{name} must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"gold_query": self.gold_query, "image_query": self.image_query, "image_entity": self.image_entity}


def _ask(model: ChatBackend, text: str, images: Iterable[str], key: str) -> str:
    return model.chat(ModelRequest((user_message(text, images),), key=key)).text


def decompose(example: VqaExample, model: ChatBackend) -> DecompositionRecord:
    """Gold query from (question, answer), then image query/entity from (question, gold query)."""
    if not example.answer:
        raise ValueError(f"{example.id}: decomposition needs a gold answer")
    images = [example.image] if example.image else []
    try:
        gold = parse_json_field(
            _ask(model, render_gold_query_training(example.question, example.answer), images, f"decompose_gold:{example.id}"),
            "gold_query",
        ).strip()
        if not gold or gold == example.question.strip():
            raise DecompositionFailed(f"{example.id}: gold query is empty or repeats the question")
        reply = _ask(model, render_image_query_prompt(example.question, gold), images, f"decompose_image:{example.id}")
        image_query = parse_json_field(reply, "image_query").strip()
        image_entity = parse_json_field(reply, "image_entity").strip()
    except ParseFailed as exc:
        raise DecompositionFailed(f"{example.id}: {exc}") from exc
    try:
        return DecompositionRecord(example.id, gold, image_query, image_entity)
    except ValueError as exc:
        raise DecompositionFailed(f"{example.id}: {exc}") from exc


def probe_correct(
    model: ChatBackend,
    judge: ChatBackend,
    question: str,
    image: str | None,
    reference_answer: str,
    *,
    key: str | None = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> bool:
    """Answer ``question`` with ``model`` (image attached iff given) and judge it against the reference.

    ``key`` is the fixture suffix, e.g. ``"ex1/q"`` -> ``answer:ex1/q``, ``judge:ex1/q``.
    """
    if not question or not reference_answer:
        raise ValueError("question and reference_answer must be non-empty")
    prompt = build_answer_prompt(question, with_image=image is not None)
    answer = _ask(model, prompt, [image] if image else [], f"answer:{key}" if key else None)
    if not answer.strip():
        return False
    score = judge_raw_score(judge, question, reference_answer, answer, key=f"judge:{key}" if key else None)
    return score >= threshold


def label(probes: ProbeOutcome) -> AnnotationLabel:
    if probes.bq:
        return AnnotationLabel(category=Category.NO_MRAG, probes=probes)
    if probes.bi and not probes.bg:
        return AnnotationLabel(category=Category.TEXT_MRAG, probes=probes)
    if not probes.bi and probes.bg:
        return AnnotationLabel(category=Category.IMAGE_MRAG, probes=probes)
    if not probes.bi and not probes.bg:
        return AnnotationLabel(category=Category.BOTH_MRAG, probes=probes)
    return AnnotationLabel(excluded=True, exclusion_reason=ExclusionReason.CONTRADICTORY_PROBES, probes=probes)


@dataclass
class Annotation:
    example: VqaExample
    label: AnnotationLabel
    decomposition: DecompositionRecord | None = None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {"example_id": self.example.id, **self.label.to_dict()}
        d["decomposition"] = self.decomposition.to_dict() if self.decomposition else None
        if self.error:
            d["error"] = self.error
        return d


def _excluded(example: VqaExample, reason: ExclusionReason, exc: Exception, dec=None) -> Annotation:
    log.info("%s excluded (%s): %s", example.id, reason.value, exc)
    return Annotation(example, AnnotationLabel(excluded=True, exclusion_reason=reason), dec, str(exc))


def annotate_example(example: VqaExample, backends: Backends, threshold: float = DEFAULT_THRESHOLD) -> Annotation:
    """Decompose, probe and label one example. Failures become exclusions, never exceptions."""
    try:
        dec = decompose(example, backends.rewrite)
    except (DecompositionFailed, BackendError) as exc:
        return _excluded(example, ExclusionReason.DECOMPOSITION_FAILED, exc)

    ref = example.answer or ""
    try:
        bq = probe_correct(
            backends.task, backends.judge, example.question, example.image, ref, key=f"{example.id}/q", threshold=threshold
        )
        if bq:
            probes = ProbeOutcome(bq=True)
        else:
            bi = probe_correct(
                backends.task,
                backends.judge,
                dec.image_query,
                example.image,
                dec.image_entity,
                key=f"{example.id}/qi",
                threshold=threshold,
            )
            # Text-only: the gold query names the entity, so the image is withheld.
            bg = probe_correct(
                backends.task, backends.judge, dec.gold_query, None, ref, key=f"{example.id}/qg", threshold=threshold
            )
            probes = ProbeOutcome(bq=False, bi=bi, bg=bg)
    except (JudgeFailed, BackendError) as exc:
        return _excluded(example, ExclusionReason.JUDGE_FAILED, exc, dec)
    return Annotation(example, label(probes), dec)


@dataclass
class AnnotationStats:
    n_input: int = 0
    labeled: Counter = field(default_factory=Counter)
    excluded: Counter = field(default_factory=Counter)
    retained: Counter = field(default_factory=Counter)
    cap_discarded: Counter = field(default_factory=Counter)
    by_source: dict[str, Counter] = field(default_factory=lambda: defaultdict(Counter))

    @property
    def n_retained(self) -> int:
        return sum(self.retained.values())

    @property
    def n_excluded(self) -> int:
        return sum(self.excluded.values())

    @property
    def n_cap_discarded(self) -> int:
        return sum(self.cap_discarded.values())

    def to_dict(self) -> dict[str, Any]:
        codes = [c.code for c in Category]
        return {
            "n_input": self.n_input,
            "labeled": {c: self.labeled[c] for c in codes},
            "excluded": self.n_excluded,
            "excluded_by_reason": {r.value: self.excluded[r.value] for r in ExclusionReason},
            "retained": {c: self.retained[c] for c in codes},
            "cap_discarded": {c: self.cap_discarded[c] for c in codes},
            "total_final": self.n_retained,
            "by_source": {s: dict(sorted(cnt.items())) for s, cnt in sorted(self.by_source.items())},
        }


def training_record(example: VqaExample, category: Category) -> dict[str, Any]:
    """Chat-style SFT record: planner prompt in, option letter out."""
    return {
        "id": example.id,
        "messages": [
            {"role": "user", "content": render_planner_prompt(example.question)},
            {"role": "assistant", "content": f"{letter_of(category)}."},
        ],
        "images": [example.image],
        "category": category.code,
        "source": example.source,
    }


def subsample(candidates: list[VqaExample], cap: int | None, seed: int, category: Category) -> list[VqaExample]:
    """Seeded uniform subsample of at most ``cap`` items, returned in id order."""
    ordered = sorted(candidates, key=lambda e: e.id)
    if cap is None or len(ordered) <= cap:
        return ordered
    rng = random.Random(f"{seed}:{category.code}")
    return sorted(rng.sample(ordered, cap), key=lambda e: e.id)


@dataclass
class TrainingSet:
    records: list[dict[str, Any]]
    annotations: list[Annotation]
    stats: AnnotationStats


def balance(
    annotations: Iterable[Annotation], caps: Mapping[Category, int | None], seed: int = 0
) -> tuple[list[tuple[VqaExample, Category]], AnnotationStats]:
    annotations = sorted(annotations, key=lambda a: a.example.id)
    stats = AnnotationStats(n_input=len(annotations))
    pools: dict[Category, list[VqaExample]] = {c: [] for c in Category}
    for ann in annotations:
        src = ann.example.source or "unknown"
        if ann.label.excluded:
            stats.excluded[ann.label.exclusion_reason.value] += 1
            stats.by_source[src]["excluded"] += 1
        else:
            cat = ann.label.category
            stats.labeled[cat.code] += 1
            stats.by_source[src][cat.code] += 1
            pools[cat].append(ann.example)
    kept: list[tuple[VqaExample, Category]] = []
    for cat in Category:
        cap = caps.get(cat)
        if cap is not None and cap < 0:
            raise ValueError(f"cap for {cat.code} must be >= 0")
        chosen = subsample(pools[cat], cap, seed, cat)
        stats.retained[cat.code] = len(chosen)
        stats.cap_discarded[cat.code] = len(pools[cat]) - len(chosen)
        kept.extend((ex, cat) for ex in chosen)
    kept.sort(key=lambda pair: pair[0].id)
    return kept, stats


def build_training_set(
    dataset: Iterable[VqaExample],
    caps: Mapping[Category, int | None] | None,
    backends: Backends,
    seed: int = 0,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    workers: int = 1,
) -> TrainingSet:
    dataset = list(dataset)
    for ex in dataset:
        if not ex.answer:
            raise ValueError(f"{ex.id}: training examples need an answer")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        annotations = list(pool.map(lambda ex: annotate_example(ex, backends, threshold), dataset))
    annotations.sort(key=lambda a: a.example.id)
    kept, stats = balance(annotations, caps or {}, seed)
    records = [training_record(ex, cat) for ex, cat in kept]
    return TrainingSet(records, annotations, stats)
