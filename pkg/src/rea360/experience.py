"""Dual-level experience pools: per-agent local lessons scoped to one
run, and a workspace-wide global pool that accumulates across runs."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from filelock import FileLock

from . import prompts
from .backend import Gateway
from .domain import EvaluationReport, Experience, ReviewSet, TurnResponse
from .errors import CorruptPoolError, SchemaError

EMPTY_SLOT = "(none)"

_EXPERIENCE_LINE_RE = re.compile(r"Experience\s*:\s*(.+)", re.DOTALL)


@dataclass
class ExperiencePool:
    """Append-only ordered pool of experiences at one level."""

    level: str  # local | global
    run_id: str | None = None  # local scope
    agent_index: int | None = None  # local scope
    entries: list[Experience] = field(default_factory=list)

    def append(
        self,
        text: str,
        *,
        origin_run_id: str,
        origin_agent: int | None = None,
        origin_turn: int | None = None,
    ) -> Experience:
        seq = self.entries[-1].created_seq + 1 if self.entries else 0
        exp = Experience(
            level=self.level,
            text=text,
            origin_run_id=origin_run_id,
            origin_agent=origin_agent,
            origin_turn=origin_turn,
            created_seq=seq,
        )
        self.entries.append(exp)
        return exp

    def __len__(self) -> int:
        return len(self.entries)


def new_global_pool() -> ExperiencePool:
    return ExperiencePool(level="global")


def new_local_pool(run_id: str, agent_index: int) -> ExperiencePool:
    return ExperiencePool(level="local", run_id=run_id, agent_index=agent_index)


def select_global(pool: ExperiencePool, k: int) -> list[Experience]:
    """The min(k, len(pool)) most recent entries, newest last."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return []
    return list(pool.entries[-k:])


def build_local_experience(
    gateway: Gateway,
    agent_index: int,
    role_name: str,
    response: TurnResponse,
    reviews: ReviewSet,
    local_pool: ExperiencePool,
) -> tuple[Experience, bool]:
    """Distill one local lesson from this turn's review set and append it.

    Returns (experience, parsed) where parsed is False when the model
    skipped the "Experience:" structure and the raw text was kept.
    """
    ordered = reviews.in_canonical_order()
    feedback = "\n\n".join(r.text for r in ordered) if ordered else EMPTY_SLOT
    prior = "\n".join(e.text for e in local_pool.entries) if local_pool.entries else EMPTY_SLOT
    prompt = prompts.render(
        "local_experience",
        {"role": role_name, "peer_feedback": feedback, "pre_exp": prior},
    )
    raw = gateway.call("local_exp", prompt, crew=agent_index, turn=reviews.turn)
    match = _EXPERIENCE_LINE_RE.search(raw)
    parsed = match is not None
    text = match.group(1).strip() if match else raw
    exp = local_pool.append(
        text,
        origin_run_id=gateway.run_id,
        origin_agent=agent_index,
        origin_turn=reviews.turn,
    )
    return exp, parsed


def distill_global_experience(
    gateway: Gateway,
    evaluation: EvaluationReport,
    final_responses: list[TurnResponse],
) -> str:
    """One backend call distilling a run-level lesson from the final crew
    responses and the evaluator's report."""
    finals = "\n\n".join(r.text for r in sorted(final_responses, key=lambda r: r.crew_index))
    prompt = prompts.render(
        "global_experience",
        {"Final_Res": finals, "evaluation": evaluation.overall_text},
    )
    return gateway.call("global_exp", prompt)


def build_global_experience(
    gateway: Gateway,
    global_pool: ExperiencePool,
    evaluation: EvaluationReport,
    final_responses: list[TurnResponse],
) -> Experience:
    """Distill one run-level lesson and append it to the global pool."""
    text = distill_global_experience(gateway, evaluation, final_responses)
    return global_pool.append(text, origin_run_id=gateway.run_id)


def _entry_to_doc(exp: Experience) -> dict[str, Any]:
    origin: dict[str, Any] = {"run_id": exp.origin_run_id}
    if exp.origin_agent is not None:
        origin["agent_index"] = exp.origin_agent
    if exp.origin_turn is not None:
        origin["turn"] = exp.origin_turn
    return {
        "level": exp.level,
        "text": exp.text,
        "origin": origin,
        "created_seq": exp.created_seq,
    }


def _entry_from_doc(doc: Any, index: int, expected_level: str) -> Experience:
    if not isinstance(doc, dict):
        raise CorruptPoolError(index, "entry is not an object")
    level = doc.get("level")
    if level not in ("local", "global"):
        raise CorruptPoolError(index, f"bad level {level!r}")
    if level != expected_level:
        raise CorruptPoolError(index, f"{level}-level entry inside a {expected_level} pool")
    text = doc.get("text")
    if not isinstance(text, str) or not text:
        raise CorruptPoolError(index, "missing or empty text")
    origin = doc.get("origin")
    if not isinstance(origin, dict) or not isinstance(origin.get("run_id"), str):
        raise CorruptPoolError(index, "missing origin.run_id")
    seq = doc.get("created_seq")
    if not isinstance(seq, int) or isinstance(seq, bool):
        raise CorruptPoolError(index, "missing created_seq")
    try:
        return Experience(
            level=level,
            text=text,
            origin_run_id=origin["run_id"],
            origin_agent=origin.get("agent_index"),
            origin_turn=origin.get("turn"),
            created_seq=seq,
        )
    except ValueError as exc:
        raise CorruptPoolError(index, str(exc)) from exc


def persist(pool: ExperiencePool, path: Path) -> None:
    """Write the pool as a JSON array of entries."""
    path.parent.mkdir(parents=True, exist_ok=True)
    docs = [_entry_to_doc(e) for e in pool.entries]
    path.write_text(json.dumps(docs, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def load(path: Path, level: str = "global") -> ExperiencePool:
    """Load a persisted pool; load . persist is the identity."""
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("pool", f"not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise SchemaError("pool", "expected an array of entries")
    pool = ExperiencePool(level=level)
    last_seq = -1
    for i, doc in enumerate(data):
        exp = _entry_from_doc(doc, i, level)
        if exp.created_seq <= last_seq:
            raise CorruptPoolError(i, "created_seq not strictly increasing")
        last_seq = exp.created_seq
        pool.entries.append(exp)
    return pool


def load_or_empty(path: Path) -> ExperiencePool:
    return load(path) if path.exists() else new_global_pool()


def append_global_and_persist(
    path: Path, text: str, *, origin_run_id: str
) -> Experience:
    """Locked read-modify-write append to the workspace global pool file.

    The advisory lock keeps sequential multi-process batches from
    interleaving appends.
    """
    lock = FileLock(str(path) + ".lock")
    with lock:
        pool = load_or_empty(path)
        exp = pool.append(text, origin_run_id=origin_run_id)
        persist(pool, path)
    return exp
