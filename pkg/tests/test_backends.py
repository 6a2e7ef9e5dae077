import base64
import json
import threading

import httpx
import pytest
from hypothesis import given, strategies as st

from mragplan.backends import (
    FixtureSet,
    HttpChatBackend,
    HttpSearchBackend,
    ImagePart,
    LatencyModel,
    LatencyRecorder,
    Message,
    MockChatBackend,
    MockSearchBackend,
    ModelRequest,
    RetryPolicy,
    chat,
    encode_messages,
    record,
    search_image,
    search_text,
    search_text_to_image,
    user_message,
)
from mragplan.core import ToolKind
from mragplan.errors import BackendRefused, BackendUnreachable, FixtureMiss


def _req(key="plan:q42", text="hello"):
    return ModelRequest((user_message(text),), key=key)


def _hits(n):
    return [{"title": f"t{i}", "snippet": f"s{i}"} for i in range(1, n + 1)]


# --- requests -------------------------------------------------------------


def test_request_requires_user_message():
    with pytest.raises(ValueError):
        ModelRequest(())
    with pytest.raises(ValueError):
        ModelRequest((Message("system", ("be brief",)),))


def test_image_parts_only_in_user_messages():
    with pytest.raises(ValueError):
        ModelRequest((Message("assistant", (ImagePart("a.jpg"),)), user_message("q")))


def test_user_message_places_image_at_token():
    msg = user_message("intro\n<image>\nWho is this?", ["a.jpg"])
    assert msg.parts == ("intro\n", ImagePart("a.jpg"), "\nWho is this?")
    # Images without a token slot lead the message.
    assert user_message("no token", ["b.jpg"]).parts == (ImagePart("b.jpg"), "no token")
    # A token without an image is dropped rather than sent as text.
    assert user_message("<image>\nq").parts == ("\nq",)


# --- mock chat ------------------------------------------------------------


def test_mock_chat_fixture_lookup():
    fx = FixtureSet()
    fx.add("chat", "plan:q42", "C.")
    backend = MockChatBackend(fx)
    resp = chat(backend, _req())
    assert resp.text == "C."
    assert resp.latency_seconds == 0.0


def test_mock_chat_miss():
    with pytest.raises(FixtureMiss):
        MockChatBackend(FixtureSet()).chat(_req())


def test_mock_retry_key_falls_back_to_base():
    fx = FixtureSet()
    fx.add("chat", "plan:q1", "maybe?")
    fx.add("chat", "rewrite:q1@2", "second")
    fx.add("chat", "rewrite:q1", "first")
    backend = MockChatBackend(fx)
    assert backend.chat(_req("plan:q1@2")).text == "maybe?"
    assert backend.chat(_req("rewrite:q1@2")).text == "second"


@given(st.text(min_size=1, max_size=30), st.text(max_size=30))
def test_mock_is_pure(key, value):
    fx = FixtureSet()
    fx.add("chat", key, value)
    a, b = MockChatBackend(fx), MockChatBackend(fx)
    assert a.chat(_req(key)).text == b.chat(_req(key)).text == a.chat(_req(key)).text == value


def test_fixture_file_round_trip(tmp_path):
    path = tmp_path / "fx.jsonl"
    rows = [
        {"key": "answer:x", "kind": "chat", "value": "Zhao Liying"},
        {"key": "x", "kind": "i2i", "value": _hits(2)},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    fx = FixtureSet.load(path)
    assert len(fx) == 2
    assert fx.get("i2i", "x") == _hits(2)
    path.write_text(json.dumps({"key": "k", "kind": "video", "value": 1}) + "\n")
    with pytest.raises(ValueError):
        FixtureSet.load(path)


# --- mock search ----------------------------------------------------------


def test_search_image_truncates():
    fx = FixtureSet()
    fx.add("i2i", "q1", _hits(5))
    hits = search_image(MockSearchBackend(fx), "img.jpg", 3, key="q1")
    assert [h.rank for h in hits] == [1, 2, 3]
    assert all(h.source_tool is ToolKind.I2I for h in hits)


def test_search_empty_fixtures():
    backend = MockSearchBackend(FixtureSet())
    assert search_image(backend, "img.jpg", 3, key="q1") == []
    assert search_text_to_image(backend, "a query", 3) == []


def test_search_text_fewer_than_k():
    fx = FixtureSet()
    fx.add("t2t", "When was X founded", _hits(2))
    hits = search_text(MockSearchBackend(fx), "When was X founded", 5)
    assert len(hits) == 2
    assert hits[0].source_tool is ToolKind.T2T and hits[0].rank == 1


def test_search_t2i_tagging():
    fx = FixtureSet()
    fx.add("t2i", "k", _hits(1))
    assert search_text_to_image(MockSearchBackend(fx), "q", 2, key="k")[0].source_tool is ToolKind.T2I


@pytest.mark.parametrize("fn", [search_image, search_text, search_text_to_image])
def test_search_top_k_must_be_positive(fn):
    with pytest.raises(ValueError):
        fn(MockSearchBackend(FixtureSet()), "x", 0)


def test_search_text_rejects_empty_query():
    with pytest.raises(ValueError):
        search_text(MockSearchBackend(FixtureSet()), "", 3)


@given(st.integers(0, 12), st.integers(1, 12), st.sampled_from(list(ToolKind)))
def test_search_result_invariants(n, k, tool):
    fx = FixtureSet()
    fx.add(tool.value, "key", _hits(n))
    backend = MockSearchBackend(fx)
    fn = {ToolKind.I2I: backend.search_image, ToolKind.T2T: backend.search_text, ToolKind.T2I: backend.search_text_to_image}[tool]
    hits = fn("query", k, key="key")
    assert len(hits) == min(n, k)
    assert [h.rank for h in hits] == list(range(1, len(hits) + 1))
    assert {h.source_tool for h in hits} <= {tool}


# --- latency --------------------------------------------------------------


def test_latency_defaults():
    lm = LatencyModel()
    assert (lm.i2i_seconds, lm.t2t_seconds, lm.t2i_seconds, lm.agent_infer_seconds) == (6.4, 1.4, 1.9, 1.65)
    with pytest.raises(ValueError):
        LatencyModel(i2i_seconds=-1)


def test_recorder_counts_and_seconds():
    rec = LatencyRecorder()
    record(rec, ToolKind.I2I, 0.5)
    totals = record(rec, "i2i", 0.25)
    assert totals.count("i2i") == 2
    record(rec, ToolKind.T2T, 1.4)
    assert rec.totals().seconds(ToolKind.T2T) == 1.4
    with pytest.raises(ValueError):
        rec.record(ToolKind.T2T, -0.1)


@given(st.lists(st.tuples(st.sampled_from(["i2i", "t2t"]), st.integers(0, 100)), max_size=40), st.randoms())
def test_recorder_order_independent(records, rnd):
    a, b = LatencyRecorder(), LatencyRecorder()
    for tool, ms in records:
        a.record(tool, ms / 1000)
    shuffled = list(records)
    rnd.shuffle(shuffled)
    for tool, ms in shuffled:
        b.record(tool, ms / 1000)
    ta, tb = a.totals(), b.totals()
    assert ta.counts == tb.counts
    for tool in ta.measured:
        assert ta.measured[tool] == pytest.approx(tb.measured[tool])


def test_recorder_threaded_increments():
    rec = LatencyRecorder()

    def work():
        for _ in range(500):
            rec.record(ToolKind.I2I, 0.001)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert rec.totals().count(ToolKind.I2I) == 4000


# --- HTTP -----------------------------------------------------------------


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_chat_wire_format(tmp_path):
    img = tmp_path / "cat.png"
    img.write_bytes(b"\x89PNG fake")
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": "C."}}]})

    backend = HttpChatBackend("http://llm.local/v1/", "qwen-vl", api_key="sk-test", client=_client(handler))
    req = ModelRequest((user_message("<image>\nWho is this?", [str(img)]),), key="ignored")
    resp = backend.chat(req)
    assert resp.text == "C."
    assert resp.backend_id == "http:qwen-vl"
    assert seen["url"] == "http://llm.local/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    body = seen["body"]
    assert body["model"] == "qwen-vl" and body["temperature"] == 0.0
    content = body["messages"][0]["content"]
    assert content[0]["type"] == "image_url"
    assert content[0]["image_url"]["url"] == "data:image/png;base64," + base64.b64encode(b"\x89PNG fake").decode()
    assert content[1] == {"type": "text", "text": "\nWho is this?"}


def test_encode_messages_text_only_uses_plain_string():
    assert encode_messages([user_message("hi")]) == [{"role": "user", "content": "hi"}]
    url_msg = encode_messages([user_message("<image>", ["https://x/y.jpg"])])
    assert url_msg[0]["content"][0]["image_url"]["url"] == "https://x/y.jpg"


def test_http_500_is_refused_without_retry():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500, json={"error": "boom"})

    sleeps = []
    backend = HttpChatBackend("http://llm", "m", client=_client(handler), retry=RetryPolicy(sleep=sleeps.append))
    with pytest.raises(BackendRefused) as info:
        backend.chat(_req())
    assert info.value.status_code == 500
    assert len(calls) == 1 and sleeps == []


def test_http_unreachable_retries_once_with_backoff():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("refused", request=request)

    sleeps = []
    backend = HttpChatBackend("http://llm", "m", client=_client(handler), retry=RetryPolicy(sleep=sleeps.append))
    with pytest.raises(BackendUnreachable):
        backend.chat(_req())
    assert len(calls) == 2
    assert sleeps == [1.0]


def test_http_retry_recovers():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ReadTimeout("slow", request=request)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    backend = HttpChatBackend("http://llm", "m", client=_client(handler), retry=RetryPolicy(sleep=lambda s: None))
    assert backend.chat(_req()).text == "ok"


def test_http_malformed_body():
    backend = HttpChatBackend(
        "http://llm", "m", client=_client(lambda r: httpx.Response(200, json={"nope": 1})), retry=RetryPolicy(sleep=lambda s: None)
    )
    with pytest.raises(BackendUnreachable):
        backend.chat(_req())


def test_http_search_wire_format():
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append((str(request.url), body))
        return httpx.Response(200, json={"results": _hits(5)})

    backend = HttpSearchBackend("http://search.local", client=_client(handler))
    hits = backend.search_text("When was X founded", 3)
    assert [h.rank for h in hits] == [1, 2, 3] and hits[0].source_tool is ToolKind.T2T
    assert seen[0] == ("http://search.local/search", {"tool": "t2t", "query": "When was X founded", "top_k": 3})
    backend.search_image("https://img/x.jpg", 2)
    assert seen[1][1] == {"tool": "i2i", "image": "https://img/x.jpg", "top_k": 2}
    assert backend.search_text_to_image("a cat", 1)[0].source_tool is ToolKind.T2I


def test_http_search_empty_results():
    backend = HttpSearchBackend("http://s", client=_client(lambda r: httpx.Response(200, json={"results": []})))
    assert backend.search_image("https://img/x.jpg", 3) == []


def test_http_search_refused():
    backend = HttpSearchBackend("http://s", client=_client(lambda r: httpx.Response(403)))
    with pytest.raises(BackendRefused):
        backend.search_text("q", 3)
