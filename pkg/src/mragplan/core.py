"""Shared domain types: examples, routing categories, tool-call profiles."""

from __future__ import annotations

import enum
import json
import string
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import MalformedChoice


class Category(enum.IntEnum):
    """Routing decision. Integer value gives the c1 < c2 < c3 < c4 order."""

    NO_MRAG = 1
    TEXT_MRAG = 2
    IMAGE_MRAG = 3
    BOTH_MRAG = 4

    @property
    def code(self) -> str:
        return f"c{self.value}"

    @property
    def letter(self) -> str:
        return _CATEGORY_TO_LETTER[self]

    @classmethod
    def from_code(cls, code: str) -> Category:
        code = code.strip().lower()
        for cat in cls:
            if cat.code == code:
                return cat
        raise ValueError(f"unknown category code {code!r}")


# Option B of the planner prompt asks for visual information (image retrieval, c3)
# and option C for textual information (text retrieval, c2).
_LETTER_TO_CATEGORY = {
    "A": Category.NO_MRAG,
    "B": Category.IMAGE_MRAG,
    "C": Category.TEXT_MRAG,
    "D": Category.BOTH_MRAG,
}
_CATEGORY_TO_LETTER = {cat: letter for letter, cat in _LETTER_TO_CATEGORY.items()}


def letter_of(category: Category) -> str:
    return _CATEGORY_TO_LETTER[category]


def category_from_letter(letter: str) -> Category:
    """Map a planner answer such as ``"C."`` or ``" a "`` to its category.

    Whitespace and trailing punctuation are stripped and case is ignored. The
    first alphabetic character decides; anything outside A-D raises
    :class:`MalformedChoice`.
    """
    if not isinstance(letter, str) or not letter:
        raise ValueError("letter must be a non-empty string")
    text = letter.strip().rstrip(string.punctuation + " \t\r\n")
    first = next((ch for ch in text if ch.isalpha()), None)
    if first is None:
        raise MalformedChoice(f"no option letter in {letter!r}")
    cat = _LETTER_TO_CATEGORY.get(first.upper())
    if cat is None:
        raise MalformedChoice(f"option {first!r} not in A-D")
    return cat


class ToolKind(str, enum.Enum):
    I2I = "i2i"
    T2T = "t2t"
    T2I = "t2i"


@dataclass(frozen=True)
class ToolCallProfile:
    i2i_count: int = 0
    t2t_count: int = 0
    t2i_count: int = 0
    rewrite_calls: int = 0
    task_model_calls: int = 0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def __add__(self, other: ToolCallProfile) -> ToolCallProfile:
        if not isinstance(other, ToolCallProfile):
            return NotImplemented
        return ToolCallProfile(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.i2i_count, self.t2t_count, self.t2i_count, self.rewrite_calls, self.task_model_calls)

    def count(self, tool: ToolKind) -> int:
        return {ToolKind.I2I: self.i2i_count, ToolKind.T2T: self.t2t_count, ToolKind.T2I: self.t2i_count}[tool]

    def to_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ToolCallProfile:
        return cls(**{f.name: int(data.get(f.name, 0)) for f in fields(cls)})

    @classmethod
    def total(cls, profiles: Iterable[ToolCallProfile]) -> ToolCallProfile:
        out = cls()
        for p in profiles:
            out = out + p
        return out


_EXPECTED_PROFILES = {
    Category.NO_MRAG: ToolCallProfile(0, 0, 0, 0, 1),
    Category.TEXT_MRAG: ToolCallProfile(0, 1, 0, 1, 1),
    Category.IMAGE_MRAG: ToolCallProfile(1, 0, 0, 0, 1),
    Category.BOTH_MRAG: ToolCallProfile(1, 1, 0, 1, 1),
}


def expected_tool_calls(category: Category) -> ToolCallProfile:
    """Canonical calls made by one clean execution of ``category``'s path."""
    return _EXPECTED_PROFILES[Category(category)]


@dataclass(frozen=True)
class RetrievedContext:
    source_tool: ToolKind
    title: str
    snippet: str
    rank: int
    image_ref: str | None = None

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        object.__setattr__(self, "source_tool", ToolKind(self.source_tool))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "source_tool": self.source_tool.value,
            "title": self.title,
            "snippet": self.snippet,
            "rank": self.rank,
        }
        if self.image_ref is not None:
            d["image_ref"] = self.image_ref
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RetrievedContext:
        return cls(
            source_tool=ToolKind(data["source_tool"]),
            title=str(data.get("title", "")),
            snippet=str(data.get("snippet", "")),
            rank=int(data["rank"]),
            image_ref=data.get("image_ref"),
        )


def check_ranks(contexts: Iterable[RetrievedContext], *, ordered: bool = False) -> None:
    """Raise ValueError unless ranks are exactly 1..n (in list order if ``ordered``)."""
    ranks = [c.rank for c in contexts]
    expected = list(range(1, len(ranks) + 1))
    if (ranks if ordered else sorted(ranks)) != expected:
        raise ValueError(f"context ranks must be contiguous from 1, got {ranks}")


@dataclass(frozen=True)
class VqaExample:
    id: str
    image: str
    question: str
    answer: str | None = None
    gold_query: str | None = None
    image_query: str | None = None
    image_entity: str | None = None
    category: Category | None = None
    # Optional provenance tag used only for per-source tallies.
    source: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("example id must be non-empty")
        if not self.question:
            raise ValueError(f"example {self.id}: question must be non-empty")
        if self.category is not None:
            object.__setattr__(self, "category", Category(self.category))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "image": self.image, "question": self.question}
        for name in ("answer", "gold_query", "image_query", "image_entity"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.category is not None:
            out["category"] = self.category.code
        if self.source is not None:
            out["source"] = self.source
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> VqaExample:
        cat = data.get("category")
        return cls(
            id=str(data["id"]),
            image=str(data.get("image", "")),
            question=str(data.get("question", "")),
            answer=data.get("answer"),
            gold_query=data.get("gold_query"),
            image_query=data.get("image_query"),
            image_entity=data.get("image_entity"),
            category=Category.from_code(cat) if cat is not None else None,
            source=data.get("source"),
        )


class ExclusionReason(str, enum.Enum):
    CONTRADICTORY_PROBES = "CONTRADICTORY_PROBES"
    DECOMPOSITION_FAILED = "DECOMPOSITION_FAILED"
    JUDGE_FAILED = "JUDGE_FAILED"


@dataclass(frozen=True)
class ProbeOutcome:
    """Correctness on q, (i, q_i) and q_g. ``None`` marks a skipped probe."""

    bq: bool
    bi: bool | None = None
    bg: bool | None = None

    def __post_init__(self) -> None:
        skipped = self.bi is None and self.bg is None
        evaluated = self.bi is not None and self.bg is not None
        if self.bq and not skipped:
            raise ValueError("bi/bg must be skipped when bq is true")
        if not self.bq and not evaluated:
            raise ValueError("bi/bg must be evaluated when bq is false")

    def to_dict(self) -> dict[str, Any]:
        def enc(v: bool | None) -> bool | str:
            return "skipped" if v is None else v

        return {"bq": self.bq, "bi": enc(self.bi), "bg": enc(self.bg)}


@dataclass(frozen=True)
class AnnotationLabel:
    category: Category | None = None
    excluded: bool = False
    exclusion_reason: ExclusionReason | None = None
    probes: ProbeOutcome | None = None

    def __post_init__(self) -> None:
        if (self.category is not None) == self.excluded:
            raise ValueError("exactly one of category or excluded must be set")
        if self.excluded and self.exclusion_reason is None:
            raise ValueError("excluded label needs a reason")
        if self.exclusion_reason is ExclusionReason.CONTRADICTORY_PROBES:
            p = self.probes
            if p is None or (p.bq, p.bi, p.bg) != (False, True, True):
                raise ValueError("CONTRADICTORY_PROBES requires probes (0, 1, 1)")

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category.code if self.category is not None else None,
            "excluded": self.excluded,
            "exclusion_reason": self.exclusion_reason.value if self.exclusion_reason else None,
            "probes": self.probes.to_dict() if self.probes is not None else None,
        }


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False))
            fh.write("\n")


def load_dataset(path: str | Path) -> list[VqaExample]:
    examples = [VqaExample.from_dict(row) for row in read_jsonl(path)]
    seen: set[str] = set()
    for ex in examples:
        if ex.id in seen:
            raise ValueError(f"duplicate example id {ex.id!r} in {path}")
        seen.add(ex.id)
    return examples


def save_dataset(path: str | Path, examples: Iterable[VqaExample]) -> None:
    write_jsonl(path, (ex.to_dict() for ex in examples))


@dataclass
class StageEvent:
    stage: str
    seconds: float
    detail: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"stage": self.stage, "seconds": self.seconds}
        if self.detail:
            d.update(self.detail)
        return d
