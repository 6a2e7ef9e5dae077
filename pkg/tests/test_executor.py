import itertools

import pytest
from hypothesis import given, strategies as st

from mragplan.backends import FixtureSet, LatencyRecorder, MockChatBackend, MockSearchBackend
from mragplan.core import Category, RetrievedContext, ToolKind, VqaExample, expected_tool_calls
from mragplan.demo import add_run_fixtures
from mragplan.executor import (
    Backends,
    ExecutorConfig,
    PipelineResult,
    assemble_context_block,
    build_answer_prompt,
    execute,
)

EX = VqaExample(id="e1", image="images/e1.jpg", question="What are the works of this actress?", answer="x")
FROZEN = ExecutorConfig(clock=lambda: 0.0)


def run(category, fx=None, recorder=None, config=FROZEN):
    if fx is None:
        fx = FixtureSet()
        add_run_fixtures(fx, EX, category)
    chat = MockChatBackend(fx)
    backends = Backends(chat, chat, chat, chat, MockSearchBackend(fx))
    return execute(EX, category, backends, config, recorder), chat


@pytest.mark.parametrize("category", list(Category))
def test_clean_profiles_match_expected(category):
    result, _ = run(category)
    assert result.tool_calls == expected_tool_calls(category)
    assert result.flags == []
    assert result.answer == "Entity e1"


@pytest.mark.parametrize(
    "category, stages",
    [
        (Category.NO_MRAG, ["answer"]),
        (Category.TEXT_MRAG, ["rewrite", "t2t", "answer"]),
        (Category.IMAGE_MRAG, ["i2i", "answer"]),
        (Category.BOTH_MRAG, ["i2i", "rewrite", "t2t", "answer"]),
    ],
)
def test_stage_order(category, stages):
    assert run(category)[0].stage_order() == stages


def test_top_k_truncates_contexts():
    result, _ = run(Category.BOTH_MRAG)
    tools = [c.source_tool for c in result.contexts_used]
    assert tools.count(ToolKind.I2I) == 3 and tools.count(ToolKind.T2T) == 2
    result, _ = run(Category.IMAGE_MRAG, config=ExecutorConfig(top_k_image=1, clock=lambda: 0.0))
    assert len(result.contexts_used) == 1


def test_c4_rewrite_sees_image_results():
    _, chat = run(Category.BOTH_MRAG)
    rewrite = next(r for r in chat.calls if r.key == "rewrite:e1")
    assert "Based on the image search results" in rewrite.text
    assert "Image Title: Actress - Entity e1" in rewrite.text


def test_c2_rewrite_uses_plain_prompt():
    result, chat = run(Category.TEXT_MRAG)
    rewrite = next(r for r in chat.calls if r.key == "rewrite:e1")
    assert "Based on the image search results" not in rewrite.text
    assert result.gold_query_used == "What are the works of Entity e1?"


@pytest.mark.parametrize("category", list(Category))
def test_answer_request_contains_every_snippet(category):
    result, chat = run(category)
    answer_req = next(r for r in chat.calls if r.key == "answer:e1")
    for c in result.contexts_used:
        assert c.snippet in answer_req.text and c.title in answer_req.text
    assert answer_req.text.endswith(EX.question)


def _garbage_rewrite(category):
    fx = FixtureSet()
    add_run_fixtures(fx, EX, category)
    fx.add("chat", "rewrite:e1", "I cannot produce JSON")
    return fx


def test_c2_degrades_to_c1_behaviour():
    result, chat = run(Category.TEXT_MRAG, _garbage_rewrite(Category.TEXT_MRAG))
    assert result.tool_calls.as_tuple() == (0, 0, 0, 1, 1)
    assert result.flags == ["REWRITE_FAILED"]
    assert chat.keys_called() == ["rewrite:e1", "rewrite:e1@2", "answer:e1"]
    assert result.contexts_used == [] and result.gold_query_used is None
    assert result.answer == "Entity e1"
    answer_req = chat.calls[-1]
    assert "Text search results" not in answer_req.text


def test_c4_degrades_to_c3_behaviour():
    result, chat = run(Category.BOTH_MRAG, _garbage_rewrite(Category.BOTH_MRAG))
    assert result.tool_calls.as_tuple() == (1, 0, 0, 1, 1)
    assert result.flags == ["REWRITE_FAILED"]
    assert result.stage_order() == ["i2i", "rewrite", "answer"]
    assert chat.keys_called() == ["rewrite:e1", "rewrite:e1@2", "answer:e1"]
    assert {c.source_tool for c in result.contexts_used} == {ToolKind.I2I}
    assert result.answer


def test_rewrite_retry_recovers():
    fx = _garbage_rewrite(Category.TEXT_MRAG)
    fx.add("chat", "rewrite:e1@2", '{"gold_query": "Who directed it?"}')
    result, _ = run(Category.TEXT_MRAG, fx)
    assert result.flags == [] and result.gold_query_used == "Who directed it?"
    assert result.tool_calls == expected_tool_calls(Category.TEXT_MRAG)


def test_empty_search_results_are_valid():
    fx = FixtureSet()
    fx.add("chat", "rewrite:e1", '{"gold_query": "What are the works of Zhao Liying?"}')
    fx.add("chat", "answer:e1", "unknown")
    result, chat = run(Category.BOTH_MRAG, fx)
    assert result.tool_calls == expected_tool_calls(Category.BOTH_MRAG)
    assert "(none)" in chat.calls[-1].text
    rewrite = next(r for r in chat.calls if r.key == "rewrite:e1")
    assert "(empty: no image search results)" in rewrite.text


def test_recorder_updated():
    rec = LatencyRecorder()
    run(Category.BOTH_MRAG, recorder=rec)
    run(Category.TEXT_MRAG, recorder=rec)
    totals = rec.totals()
    assert totals.count(ToolKind.I2I) == 1 and totals.count(ToolKind.T2T) == 2


def test_measured_seconds_use_clock():
    ticks = itertools.count()
    result, _ = run(Category.IMAGE_MRAG, config=ExecutorConfig(clock=lambda: float(next(ticks))))
    assert result.measured_seconds["i2i"] == 1.0
    assert result.search_seconds() == 1.0


def test_result_round_trip():
    result, _ = run(Category.BOTH_MRAG)
    assert PipelineResult.from_dict(result.to_dict()) == result


def test_requires_image():
    with pytest.raises(ValueError):
        fx = FixtureSet()
        chat = MockChatBackend(fx)
        execute(VqaExample(id="x", image="", question="q"), Category.NO_MRAG, Backends(chat, chat, chat, chat, MockSearchBackend(fx)))


# --- context blocks ---------------------------------------------------------


def hit(rank, tool=ToolKind.T2T):
    return RetrievedContext(tool, f"title {rank}", f"snippet {rank}", rank=rank)


def test_context_block_single_hit():
    block = assemble_context_block([hit(1)], "Text search results")
    assert block == "Text search results:\n[1] title 1 — snippet 1"
    assert block.count("[1]") == 1


def test_context_block_empty():
    assert assemble_context_block([], "Image search results") == "Image search results:\n(none)"


@given(st.permutations([1, 2, 3]))
def test_context_block_sorted(perm):
    block = assemble_context_block([hit(r) for r in perm], "Text search results")
    assert [line[:3] for line in block.splitlines()[1:]] == ["[1]", "[2]", "[3]"]


def test_context_block_rejects_gaps():
    with pytest.raises(ValueError):
        assemble_context_block([hit(1), hit(3)], "Text search results")


def test_answer_prompt_layout():
    assert build_answer_prompt("Who?", ["B1", "B2"]) == "<image>\n\nB1\n\nB2\n\nWho?"
    assert build_answer_prompt("Who?", with_image=False) == "Who?"
