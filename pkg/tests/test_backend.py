"""Backends: scripted rule matching, wire encode/decode, HTTP retries,
and transcript recording through the gateway."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, strategies as st

from rea360.backend import (
    CallTag,
    CompletionRequest,
    Gateway,
    HttpBackend,
    Message,
    ScriptedBackend,
    ScriptedRule,
    decode_chat_response,
    encode_chat_request,
    load_rules,
    replay_backend_calls,
)
from rea360.domain import RunConfig, RunTranscript
from rea360.errors import BackendConfigError, DecodeError, SchemaError, TransportError

from .conftest import echo_backend, make_gateway


def _request(call_kind="assess_peer", crew=2, reviewer=3, turn=1, content="hello"):
    return CompletionRequest(
        messages=(Message("user", content),),
        temperature=1.0,
        model_id="test-model",
        tag=CallTag(
            run_id="r", seq_hint=7, call_kind=call_kind, crew=crew, reviewer=reviewer, turn=turn
        ),
    )


def test_scripted_template_substitution():
    backend = ScriptedBackend([ScriptedRule(response="ECHO {call_kind}/{reviewee}/{turn}")])
    result = backend.complete(_request())
    assert result.text == "ECHO assess_peer/2/1"
    assert result.backend_kind == "scripted"


def test_scripted_is_deterministic():
    backend = echo_backend()
    req = _request()
    assert backend.complete(req) == backend.complete(req)


def test_first_matching_rule_wins():
    backend = ScriptedBackend(
        [
            ScriptedRule(call_kind="generate", pattern="magic", response="special"),
            ScriptedRule(call_kind="generate", response="generic generate"),
            ScriptedRule(response="fallback"),
        ]
    )
    assert backend.complete(_request("generate", content="some magic here")).text == "special"
    assert backend.complete(_request("generate", content="plain")).text == "generic generate"
    assert backend.complete(_request("evaluate", content="plain")).text == "fallback"


def test_missing_placeholders_render_as_dash():
    backend = ScriptedBackend([ScriptedRule(response="{seq}:{call_kind}/{reviewee}/{turn}")])
    req = CompletionRequest(
        messages=(Message("user", "x"),),
        temperature=1.0,
        model_id="m",
        tag=CallTag(run_id="r", seq_hint=0, call_kind="decompose"),
    )
    assert backend.complete(req).text == "0:decompose/-/-"


def test_rule_table_requires_catch_all(tmp_path):
    with pytest.raises(SchemaError, match="catch-all"):
        ScriptedBackend([ScriptedRule(call_kind="generate", response="x")])
    path = tmp_path / "rules.json"
    path.write_text(json.dumps([{"call_kind": "generate", "response": "x"}]))
    with pytest.raises(SchemaError, match="catch-all"):
        load_rules(path)
    path.write_text(json.dumps([{"response": "x"}, {"call_kind": "bogus", "response": "y"}]))
    with pytest.raises(SchemaError, match="call kind"):
        load_rules(path)


def test_encode_carries_exact_temperature():
    body = json.loads(encode_chat_request(_request()))
    assert body["temperature"] == 1.0
    assert body["model"] == "test-model"
    assert body["messages"] == [{"role": "user", "content": "hello"}]


def test_decode_empty_choices():
    with pytest.raises(DecodeError, match=r"choices\[0\]"):
        decode_chat_response(json.dumps({"choices": []}))


def test_decode_missing_content():
    with pytest.raises(DecodeError, match="content"):
        decode_chat_response(json.dumps({"choices": [{"message": {}}]}))
    with pytest.raises(DecodeError, match="message"):
        decode_chat_response(json.dumps({"choices": [{}]}))
    with pytest.raises(DecodeError, match="JSON"):
        decode_chat_response(b"not json")


_messages = st.lists(
    st.builds(
        Message,
        role=st.sampled_from(["system", "user", "assistant"]),
        content=st.text(min_size=0, max_size=80),
    ),
    min_size=1,
    max_size=6,
).filter(lambda msgs: msgs[0].role in ("system", "user"))


@given(
    messages=_messages,
    temperature=st.floats(min_value=0.0, max_value=2.0, allow_nan=False),
)
def test_encode_roundtrip_preserves_messages(messages, temperature):
    req = CompletionRequest(
        messages=tuple(messages),
        temperature=temperature,
        model_id="m",
        tag=CallTag(run_id="r", seq_hint=0, call_kind="generate"),
    )
    body = json.loads(encode_chat_request(req))
    assert body["temperature"] == temperature
    assert [(m["role"], m["content"]) for m in body["messages"]] == [
        (m.role, m.content) for m in messages
    ]


class _StubHandler(BaseHTTPRequestHandler):
    responses: list[tuple[int, dict]] = []
    seen: list[dict] = []

    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers["Content-Length"])
        type(self).seen.append(json.loads(self.rfile.read(length)))
        status, body = (
            type(self).responses.pop(0) if type(self).responses else (200, _two_choice_body())
        )
        payload = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):  # silence the test server
        pass


def _two_choice_body() -> dict:
    return {
        "choices": [
            {"message": {"role": "assistant", "content": "first choice"}},
            {"message": {"role": "assistant", "content": "second choice"}},
        ],
        "usage": {"prompt_tokens": 12, "completion_tokens": 5},
    }


@pytest.fixture
def stub_server():
    _StubHandler.responses = []
    _StubHandler.seen = []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", _StubHandler
    server.shutdown()
    thread.join(timeout=2)


def test_http_uses_first_choice_only(stub_server, monkeypatch):
    base_url, handler = stub_server
    monkeypatch.delenv("REA_BASE_URL", raising=False)
    backend = HttpBackend(base_url=base_url, api_key="k", backoff=0.0)
    result = backend.complete(_request())
    assert result.text == "first choice"
    assert result.prompt_units == 12 and result.completion_units == 5
    assert result.backend_kind == "http"
    assert handler.seen[0]["temperature"] == 1.0


def test_http_retries_transport_errors(stub_server):
    base_url, handler = stub_server
    handler.responses = [(500, {"error": "boom"}), (503, {"error": "again"})]
    backend = HttpBackend(base_url=base_url, api_key="k", backoff=0.0)
    result = backend.complete(_request())
    assert result.text == "first choice"
    assert len(handler.seen) == 3


def test_http_gives_up_after_bounded_retries(stub_server):
    base_url, handler = stub_server
    handler.responses = [(500, {}), (500, {}), (500, {})]
    backend = HttpBackend(base_url=base_url, api_key="k", backoff=0.0)
    with pytest.raises(TransportError, match="3 attempts"):
        backend.complete(_request())


def test_http_decode_error_is_fatal_not_retried(stub_server):
    base_url, handler = stub_server
    handler.responses = [(200, {"choices": []})]
    backend = HttpBackend(base_url=base_url, api_key="k", backoff=0.0)
    with pytest.raises(DecodeError):
        backend.complete(_request())
    assert len(handler.seen) == 1


def test_missing_credential(monkeypatch):
    monkeypatch.delenv("REA_API_KEY", raising=False)
    with pytest.raises(BackendConfigError, match="credential"):
        HttpBackend(base_url="http://example.invalid")


def test_gateway_records_each_call_once(stub_server):
    base_url, handler = stub_server
    handler.responses = [(500, {}), (200, _two_choice_body())]
    transcript = RunTranscript("r", "t", RunConfig().snapshot())
    gateway = Gateway(
        HttpBackend(base_url=base_url, api_key="k", backoff=0.0),
        transcript,
        run_id="r",
    )
    text = gateway.call("generate", "prompt text", crew=1, turn=0)
    assert text == "first choice"
    calls = transcript.backend_calls()
    assert len(calls) == 1  # the retried attempt is not double-recorded
    assert calls[0]["payload"]["call_kind"] == "generate"


def test_gateway_seq_matches_issue_order():
    gateway, transcript = make_gateway()
    gateway.call("generate", "a", crew=1, turn=0)
    gateway.call("assess_self", "b", crew=1, reviewer=1, turn=0)
    indices = [e["payload"]["call_index"] for e in transcript.backend_calls()]
    assert indices == [0, 1]
    assert [e["seq"] for e in transcript.events] == list(range(len(transcript.events)))


def test_replay_reproduces_scripted_transcript():
    backend = echo_backend()
    gateway, transcript = make_gateway(backend)
    gateway.call("generate", "a", crew=1, turn=0)
    gateway.call("assess_peer", "b", crew=2, reviewer=1, turn=0)
    replay_backend_calls(transcript, backend)

    other = ScriptedBackend([ScriptedRule(response="different")])
    with pytest.raises(AssertionError, match="diverged"):
        replay_backend_calls(transcript, other)
