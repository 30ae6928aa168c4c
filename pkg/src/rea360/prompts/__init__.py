"""Prompt template registry with strict placeholder substitution.

Templates live as text files under templates/. Lines starting with "#:"
at the top of a file are header notes (e.g. the "reconstructed" marker)
and are stripped at load time. Placeholders use single braces {name};
literal braces are escaped by doubling.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from ..errors import (
    MissingPlaceholderError,
    UnknownTemplateError,
    UnresolvedPlaceholderError,
)

TEMPLATE_IDS = (
    "decompose",
    "crew_generate",
    "assess_self",
    "assess_peer",
    "assess_supervisory",
    "leader_self",
    "synthesize",
    "local_experience",
    "global_experience",
    "evaluator_travel",
    "evaluator_writing",
)

_TEMPLATE_DIR = Path(__file__).parent / "templates"
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    required_placeholders: frozenset[str]


def _scan(body: str) -> list[tuple[str, str]]:
    """Tokenize a template body into (kind, value) pairs.

    kind is "text" or "slot"; doubled braces become literal text.
    """
    out: list[tuple[str, str]] = []
    i, n = 0, len(body)
    buf: list[str] = []
    while i < n:
        ch = body[i]
        if ch == "{":
            if i + 1 < n and body[i + 1] == "{":
                buf.append("{")
                i += 2
                continue
            match = _NAME_RE.match(body, i + 1)
            if not match or match.end() >= n or body[match.end()] != "}":
                raise ValueError(f"stray '{{' at offset {i} in template")
            if buf:
                out.append(("text", "".join(buf)))
                buf = []
            out.append(("slot", match.group(0)))
            i = match.end() + 1
        elif ch == "}":
            if i + 1 < n and body[i + 1] == "}":
                buf.append("}")
                i += 2
                continue
            raise ValueError(f"stray '}}' at offset {i} in template")
        else:
            buf.append(ch)
            i += 1
    if buf:
        out.append(("text", "".join(buf)))
    return out


def _load_template(template_id: str) -> PromptTemplate:
    path = _TEMPLATE_DIR / f"{template_id}.txt"
    raw_lines = path.read_text(encoding="utf-8").splitlines()
    start = 0
    while start < len(raw_lines) and raw_lines[start].startswith("#:"):
        start += 1
    body = "\n".join(raw_lines[start:])
    placeholders = frozenset(v for kind, v in _scan(body) if kind == "slot")
    return PromptTemplate(template_id, body, placeholders)


_REGISTRY: dict[str, PromptTemplate] = {tid: _load_template(tid) for tid in TEMPLATE_IDS}


def get_template(template_id: str) -> PromptTemplate:
    try:
        return _REGISTRY[template_id]
    except KeyError:
        raise UnknownTemplateError(f"no template named {template_id!r}") from None


def list_placeholders(template_id: str) -> frozenset[str]:
    """Exact placeholder set of a template, computed from its body."""
    return get_template(template_id).required_placeholders


def render(template_id: str, bindings: dict[str, str]) -> str:
    """Substitute every placeholder; extra bindings are ignored.

    Raises MissingPlaceholderError for an unbound slot and
    UnresolvedPlaceholderError if a known slot pattern survives in the
    output (e.g. smuggled in through a binding value).
    """
    template = get_template(template_id)
    for name in sorted(template.required_placeholders):
        if name not in bindings:
            raise MissingPlaceholderError(name)
    parts: list[str] = []
    for kind, value in _scan(template.body):
        parts.append(bindings[value] if kind == "slot" else value)
    rendered = "".join(parts)
    for name in sorted(template.required_placeholders):
        if "{" + name + "}" in rendered:
            raise UnresolvedPlaceholderError(name)
    return rendered


def normalized_lines(text: str) -> list[str]:
    """Line-level whitespace normalization used by the golden-file checks:
    collapse whitespace runs inside each line, strip the ends, and drop
    leading/trailing blank lines."""
    lines = [re.sub(r"\s+", " ", line).strip() for line in text.splitlines()]
    while lines and not lines[0]:
        lines.pop(0)
    while lines and not lines[-1]:
        lines.pop()
    return lines


def template_body(template_id: str) -> str:
    """Raw stored body (header lines already stripped)."""
    return get_template(template_id).body
