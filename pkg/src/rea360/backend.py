"""Single gateway for model completions.

Two interchangeable backends: an HTTP client speaking the
OpenAI-compatible chat-completion wire format, and a deterministic
scripted backend driven by an ordered rule table (the test oracle).
Every completed call is appended to the active run transcript.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import httpx

from .domain import RunTranscript
from .errors import BackendConfigError, DecodeError, SchemaError, TransportError

CALL_KINDS = (
    "decompose",
    "generate",
    "assess_self",
    "assess_peer",
    "assess_supervisory",
    "leader_self",
    "synthesize_draft",
    "synthesize_final",
    "local_exp",
    "global_exp",
    "evaluate",
)

ENV_API_KEY = "REA_API_KEY"
ENV_BASE_URL = "REA_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com"
DEFAULT_MODEL = "gpt-4-1106-preview"

_MESSAGE_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _MESSAGE_ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class CallTag:
    """Bookkeeping attached to every completion request."""

    run_id: str
    seq_hint: int
    call_kind: str
    crew: int | None = None  # subject agent: reviewee for assessments
    reviewer: int | None = None
    turn: int | None = None

    def __post_init__(self) -> None:
        if self.call_kind not in CALL_KINDS:
            raise ValueError(f"unknown call kind {self.call_kind!r}")


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[Message, ...]
    temperature: float
    model_id: str
    tag: CallTag

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("first message must be system or user")

    def last_user_content(self) -> str:
        for msg in reversed(self.messages):
            if msg.role == "user":
                return msg.content
        return ""


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_units: int = 0
    completion_units: int = 0
    backend_kind: str = "scripted"


def encode_chat_request(req: CompletionRequest) -> bytes:
    """Wire body for the chat-completions endpoint."""
    body = {
        "model": req.model_id,
        "temperature": req.temperature,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
    }
    return json.dumps(body, ensure_ascii=False).encode("utf-8")


def decode_chat_response(raw: bytes | str) -> CompletionResult:
    """Extract choices[0].message.content (and usage counts) from a wire body."""
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DecodeError("body", f"not valid JSON: {exc}") from exc
    choices = data.get("choices")
    if not isinstance(choices, list):
        raise DecodeError("choices", "missing or not a list")
    if not choices:
        raise DecodeError("choices[0]", "choices array is empty")
    message = choices[0].get("message") if isinstance(choices[0], dict) else None
    if not isinstance(message, dict):
        raise DecodeError("choices[0].message", "missing or not an object")
    content = message.get("content")
    if not isinstance(content, str):
        raise DecodeError("choices[0].message.content", "missing or not text")
    if not content:
        raise DecodeError("choices[0].message.content", "empty completion text")
    usage = data.get("usage") or {}
    return CompletionResult(
        text=content,
        prompt_units=int(usage.get("prompt_tokens", 0) or 0),
        completion_units=int(usage.get("completion_tokens", 0) or 0),
        backend_kind="http",
    )


class Backend(Protocol):
    kind: str

    def complete(self, req: CompletionRequest) -> CompletionResult: ...


@dataclass(frozen=True)
class ScriptedRule:
    """One ordered match rule: optional call-kind and substring filters,
    and a response template over {seq}, {call_kind}, {reviewee}, {turn}."""

    response: str
    call_kind: str | None = None
    pattern: str | None = None

    def matches(self, req: CompletionRequest) -> bool:
        if self.call_kind is not None and self.call_kind != req.tag.call_kind:
            return False
        if self.pattern is not None and self.pattern not in req.last_user_content():
            return False
        return True

    def is_catch_all(self) -> bool:
        return self.call_kind is None and self.pattern is None

    def render(self, req: CompletionRequest) -> str:
        tag = req.tag
        out = self.response
        out = out.replace("{seq}", str(tag.seq_hint))
        out = out.replace("{call_kind}", tag.call_kind)
        out = out.replace("{reviewee}", "-" if tag.crew is None else str(tag.crew))
        out = out.replace("{turn}", "-" if tag.turn is None else str(tag.turn))
        return out


def load_rules(path: Path) -> tuple[ScriptedRule, ...]:
    """Load an ordered rule table from a JSON array file."""
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("rules", f"not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise SchemaError("rules", "expected an array of rules")
    rules = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or "response" not in entry:
            raise SchemaError(f"rules[{i}]", "each rule needs a 'response'")
        kind = entry.get("call_kind")
        if kind is not None and kind not in CALL_KINDS:
            raise SchemaError(f"rules[{i}].call_kind", f"unknown call kind {kind!r}")
        rules.append(
            ScriptedRule(
                response=str(entry["response"]),
                call_kind=kind,
                pattern=entry.get("pattern"),
            )
        )
    table = tuple(rules)
    if not any(r.is_catch_all() for r in table):
        raise SchemaError("rules", "rule table needs a catch-all rule")
    return table


class ScriptedBackend:
    """Deterministic stand-in for the model: first matching rule wins.

    Output is a pure function of (rule table, request); no hidden state.
    """

    kind = "scripted"

    def __init__(self, rules: tuple[ScriptedRule, ...] | list[ScriptedRule]) -> None:
        table = tuple(rules)
        if not any(r.is_catch_all() for r in table):
            raise SchemaError("rules", "rule table needs a catch-all rule")
        self.rules = table

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedBackend":
        return cls(load_rules(path))

    def complete(self, req: CompletionRequest) -> CompletionResult:
        for rule in self.rules:
            if rule.matches(req):
                return CompletionResult(text=rule.render(req), backend_kind="scripted")
        raise AssertionError("unreachable: catch-all rule is mandatory")


class HttpBackend:
    """OpenAI-compatible chat-completions client with bounded retries.

    Transport failures (connection errors, timeouts, HTTP error statuses)
    retry with exponential backoff; decode failures are fatal.
    """

    kind = "http"

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
    ) -> None:
        self.base_url = (base_url or os.getenv(ENV_BASE_URL) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key or os.getenv(ENV_API_KEY)
        if not self.api_key:
            raise BackendConfigError(
                f"missing credential: set {ENV_API_KEY} or pass api_key"
            )
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, req: CompletionRequest) -> CompletionResult:
        url = f"{self.base_url}/v1/chat/completions"
        headers = {
            "Authorization": f"Bearer {self.api_key}",
            "Content-Type": "application/json",
        }
        body = encode_chat_request(req)
        last_err: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = self._client.post(url, headers=headers, content=body)
            except httpx.HTTPError as exc:
                last_err = exc
                continue
            if resp.status_code >= 400:
                last_err = TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            return decode_chat_response(resp.content)
        raise TransportError(f"request failed after {self.max_attempts} attempts: {last_err}")


class Gateway:
    """Backend plus active transcript: every completed call is recorded
    exactly once, in issue order."""

    def __init__(
        self,
        backend: Backend,
        transcript: RunTranscript,
        *,
        run_id: str,
        model_id: str = DEFAULT_MODEL,
        temperature: float = 1.0,
        temperature_overrides: dict[str, float] | None = None,
    ) -> None:
        self.backend = backend
        self.transcript = transcript
        self.run_id = run_id
        self.model_id = model_id
        self.temperature = temperature
        self.temperature_overrides = dict(temperature_overrides or {})
        self._lock = threading.Lock()
        self._issued = 0

    def complete(self, req: CompletionRequest) -> CompletionResult:
        result = self.backend.complete(req)
        self.transcript.append("backend_call", _call_event(req, result))
        return result

    def call(
        self,
        call_kind: str,
        prompt: str,
        *,
        crew: int | None = None,
        reviewer: int | None = None,
        turn: int | None = None,
    ) -> str:
        """Issue one single-message completion tagged with scheduling info."""
        with self._lock:
            seq_hint = self._issued
            self._issued += 1
        req = CompletionRequest(
            messages=(Message("user", prompt),),
            temperature=self.temperature_overrides.get(call_kind, self.temperature),
            model_id=self.model_id,
            tag=CallTag(
                run_id=self.run_id,
                seq_hint=seq_hint,
                call_kind=call_kind,
                crew=crew,
                reviewer=reviewer,
                turn=turn,
            ),
        )
        return self.complete(req).text


def _call_event(req: CompletionRequest, result: CompletionResult) -> dict[str, Any]:
    tag = req.tag
    return {
        "call_kind": tag.call_kind,
        "call_index": tag.seq_hint,
        "crew": tag.crew,
        "reviewer": tag.reviewer,
        "turn": tag.turn,
        "request": {
            "model": req.model_id,
            "temperature": req.temperature,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        },
        "response": {
            "text": result.text,
            "prompt_units": result.prompt_units,
            "completion_units": result.completion_units,
            "backend_kind": result.backend_kind,
        },
    }


def replay_backend_calls(transcript: RunTranscript, backend: Backend) -> None:
    """Re-issue every recorded request and check the recorded completions.

    Raises AssertionError on the first divergence; used to verify that a
    transcript is reproducible against a scripted rule table.
    """
    for event in transcript.backend_calls():
        payload = event["payload"]
        req = CompletionRequest(
            messages=tuple(
                Message(m["role"], m["content"]) for m in payload["request"]["messages"]
            ),
            temperature=payload["request"]["temperature"],
            model_id=payload["request"]["model"],
            tag=CallTag(
                run_id=transcript.run_id,
                seq_hint=payload["call_index"],
                call_kind=payload["call_kind"],
                crew=payload["crew"],
                reviewer=payload["reviewer"],
                turn=payload["turn"],
            ),
        )
        result = backend.complete(req)
        if result.text != payload["response"]["text"]:
            raise AssertionError(
                f"replay diverged at call {payload['call_index']} "
                f"({payload['call_kind']})"
            )
