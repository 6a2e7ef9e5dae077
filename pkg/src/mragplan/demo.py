"""Scripted offline datasets and fixtures for demos and tests.

Every builder returns ``(examples, fixtures)`` ready for the mock backends.
"""

from __future__ import annotations

import itertools
import math
from typing import Mapping

from .backends import FixtureSet
from .core import Category, VqaExample, letter_of

CORRECT = "5"
WRONG = "2.0"

# Reference routing mix over a mixed VQA benchmark, percent per category in c1..c4 order.
MIX_RATIOS = {
    Category.NO_MRAG: 24.8,
    Category.TEXT_MRAG: 43.3,
    Category.IMAGE_MRAG: 9.5,
    Category.BOTH_MRAG: 22.3,
}


def counts_from_ratios(ratios: Mapping[Category, float], n: int) -> dict[Category, int]:
    """Integer counts summing to ``n`` (largest-remainder rounding of ratio * n / 100)."""
    total = sum(ratios.values())
    raw = {c: ratios[c] / total * n for c in ratios}
    counts = {c: math.floor(v) for c, v in raw.items()}
    short = n - sum(counts.values())
    for c in sorted(raw, key=lambda c: (-(raw[c] - counts[c]), c))[:short]:
        counts[c] += 1
    return counts


def _decomposition(fx: FixtureSet, ex_id: str, entity: str) -> None:
    fx.add("chat", f"decompose_gold:{ex_id}", f'{{"gold_query": "What are the works of {entity}?"}}')
    fx.add("chat", f"decompose_image:{ex_id}", f'{{"image_query": "Who is this actor?", "image_entity": "{entity}"}}')


def probe_combo_dataset() -> tuple[list[VqaExample], FixtureSet]:
    """One training example per (bq, bi, bg) combination, judged by scripted scores."""
    fx = FixtureSet()
    examples = []
    for bq, bi, bg in itertools.product((1, 0), repeat=3):
        ex_id = f"p{bq}{bi}{bg}"
        entity = f"Actor {ex_id}"
        examples.append(
            VqaExample(
                id=ex_id,
                image=f"images/{ex_id}.jpg",
                question="What are the works of this actor?",
                answer=f"{entity}'s main works include several films.",
                source="combo",
            )
        )
        _decomposition(fx, ex_id, entity)
        for probe, ok in (("q", bq), ("qi", bi), ("qg", bg)):
            fx.add("chat", f"answer:{ex_id}/{probe}", f"answer for {probe}")
            fx.add("chat", f"judge:{ex_id}/{probe}", CORRECT if ok else WRONG)
    return examples, fx


def oversupplied_dataset(per_category: int = 4) -> tuple[list[VqaExample], FixtureSet]:
    """``per_category`` clean examples landing in each of c1..c4, plus one contradictory exclusion."""
    combos = {
        Category.NO_MRAG: (1, 0, 0),
        Category.TEXT_MRAG: (0, 1, 0),
        Category.IMAGE_MRAG: (0, 0, 1),
        Category.BOTH_MRAG: (0, 0, 0),
    }
    fx = FixtureSet()
    examples = []
    plan = [(cat, i) for cat in Category for i in range(per_category)] + [(None, 0)]
    for cat, i in plan:
        ex_id = f"{cat.code}_{i:02d}" if cat else "x_contradictory"
        bq, bi, bg = combos[cat] if cat else (0, 1, 1)
        entity = f"Entity {ex_id}"
        examples.append(
            VqaExample(
                id=ex_id,
                image=f"images/{ex_id}.jpg",
                question="What are the works of this actor?",
                answer=f"{entity} works",
                source="infoseek" if i % 2 == 0 else "vqav2",
            )
        )
        _decomposition(fx, ex_id, entity)
        for probe, ok in (("q", bq), ("qi", bi), ("qg", bg)):
            fx.add("chat", f"answer:{ex_id}/{probe}", "an answer")
            fx.add("chat", f"judge:{ex_id}/{probe}", CORRECT if ok else WRONG)
    return examples, fx


def add_run_fixtures(fx: FixtureSet, ex: VqaExample, category: Category, *, judge: str = CORRECT) -> None:
    fx.add("chat", f"plan:{ex.id}", f"{letter_of(category)}.")
    fx.add("chat", f"rewrite:{ex.id}", f'{{"gold_query": "What are the works of Entity {ex.id}?"}}')
    fx.add(
        "i2i",
        ex.id,
        [
            {"title": f"Actress - Entity {ex.id}", "snippet": f"image hit {j} for {ex.id}", "image_ref": f"web/{ex.id}_{j}.jpg"}
            for j in range(1, 5)
        ],
    )
    fx.add("t2t", ex.id, [{"title": f"Entity {ex.id} filmography", "snippet": f"text hit {j} for {ex.id}"} for j in range(1, 3)])
    fx.add("chat", f"answer:{ex.id}", f"Entity {ex.id}")
    fx.add("chat", f"judge:{ex.id}", judge)


def scripted_run_dataset(per_category: int = 3) -> tuple[list[VqaExample], FixtureSet]:
    """Inference items whose planner fixtures route ``per_category`` items to each category."""
    fx = FixtureSet()
    examples = []
    n = 0
    for cat in Category:
        for _ in range(per_category):
            n += 1
            ex = VqaExample(
                id=f"q{n:02d}",
                image=f"images/q{n:02d}.jpg",
                question="What are the works of this actor?",
                answer=f"Entity q{n:02d}",
            )
            examples.append(ex)
            add_run_fixtures(fx, ex, cat)
    return examples, fx


def mix_dataset(n: int = 600, ratios: Mapping[Category, float] = MIX_RATIOS) -> tuple[list[VqaExample], FixtureSet]:
    """Items whose scripted plans reproduce ``ratios`` (percent) as closely as ``n`` allows."""
    counts = counts_from_ratios(ratios, n)
    fx = FixtureSet()
    examples = []
    i = 0
    for cat in Category:
        for _ in range(counts[cat]):
            i += 1
            ex = VqaExample(id=f"m{i:04d}", image=f"images/m{i:04d}.jpg", question="Who is this?", answer=f"Entity m{i:04d}")
            examples.append(ex)
            add_run_fixtures(fx, ex, cat)
    return examples, fx
