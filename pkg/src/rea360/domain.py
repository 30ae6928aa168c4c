"""Core data types: tasks, agents, reviews, experiences, configs, transcripts.

Every value here is immutable after construction except RunTranscript,
which is append-only behind a single writer lock.
"""

from __future__ import annotations

import json
import re
import string
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import EmptyAnswerSetError, SchemaError

TASK_KINDS = ("creative_writing", "travel_plan")

ABLATION_FLAGS = (
    "no_exp_pool",
    "no_360",
    "no_peer",
    "no_self",
    "no_supervisory",
    "no_global_exp",
    "no_local_exp",
)

_WS_RE = re.compile(r"\s+")


def normalize_match_text(text: str) -> str:
    """Lowercase and collapse all whitespace runs to single spaces."""
    return _WS_RE.sub(" ", text.lower()).strip()


def normalize_alias(text: str) -> str:
    """Alias form used for answer matching: lowercased, whitespace-collapsed,
    leading/trailing punctuation stripped."""
    return normalize_match_text(text).strip(string.punctuation + " ")


@dataclass(frozen=True)
class AnswerSet:
    """Acceptable surface forms of one ground-truth answer."""

    aliases: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.aliases or any(not a for a in self.aliases):
            raise ValueError("answer set must hold nonempty aliases")


@dataclass(frozen=True)
class CreativeWritingPayload:
    topic: str
    questions: tuple[str, ...]
    answer_sets: tuple[AnswerSet, ...]


@dataclass(frozen=True)
class Members:
    adults: int
    children: int


@dataclass(frozen=True)
class TravelPlanPayload:
    destination: str
    days: int
    description: str
    season: str
    month: str
    interests: tuple[str, ...]
    members: Members
    preferences: str
    budget_range: str


@dataclass(frozen=True)
class TaskQuery:
    """One user task, creative-writing or travel-plan flavored."""

    task_kind: str
    task_id: str
    payload: CreativeWritingPayload | TravelPlanPayload


def _need(doc: dict[str, Any], name: str, kind: type, where: str = "") -> Any:
    if name not in doc:
        raise SchemaError(f"{where}{name}", "missing field")
    value = doc[name]
    if kind is int and isinstance(value, bool):
        raise SchemaError(f"{where}{name}", "expected an integer, got a bool")
    if not isinstance(value, kind):
        raise SchemaError(
            f"{where}{name}", f"expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _need_str(doc: dict[str, Any], name: str, where: str = "") -> str:
    value = _need(doc, name, str, where)
    if not value.strip():
        raise SchemaError(f"{where}{name}", "must be nonempty")
    return value


def validate_task(doc: dict[str, Any]) -> TaskQuery:
    """Validate a raw task record and return a TaskQuery.

    Alias text is normalized on the way in (see the matching rules in
    the metrics module); empty answer sets are rejected.
    """
    if not isinstance(doc, dict):
        raise SchemaError("task", f"expected an object, got {type(doc).__name__}")
    kind = _need_str(doc, "kind")
    if kind not in TASK_KINDS:
        raise SchemaError("kind", f"unknown task kind {kind!r}")
    task_id = _need_str(doc, "task_id")

    if kind == "creative_writing":
        topic = _need_str(doc, "topic")
        questions = _need(doc, "questions", list)
        if not questions:
            raise SchemaError("questions", "need at least one question")
        for i, q in enumerate(questions):
            if not isinstance(q, str) or not q.strip():
                raise SchemaError(f"questions[{i}]", "must be nonempty text")
        answers = _need(doc, "answers", list)
        if len(answers) != len(questions):
            raise SchemaError(
                "answers",
                f"{len(questions)} questions but {len(answers)} answer sets",
            )
        answer_sets = []
        for i, entry in enumerate(answers):
            if not isinstance(entry, list):
                raise SchemaError(f"answers[{i}]", "expected a list of aliases")
            aliases = tuple(
                normalize_alias(a) for a in entry if isinstance(a, str) and normalize_alias(a)
            )
            if not aliases:
                raise EmptyAnswerSetError(i)
            answer_sets.append(AnswerSet(aliases))
        payload: CreativeWritingPayload | TravelPlanPayload = CreativeWritingPayload(
            topic=topic,
            questions=tuple(q.strip() for q in questions),
            answer_sets=tuple(answer_sets),
        )
    else:
        days = _need(doc, "days", int)
        if days < 1:
            raise SchemaError("days", "must be >= 1")
        members_doc = _need(doc, "members", dict)
        adults = _need(members_doc, "adults", int, "members.")
        children = _need(members_doc, "children", int, "members.")
        if adults < 0 or children < 0:
            raise SchemaError("members", "adults and children must be >= 0")
        if adults + children < 1:
            raise SchemaError("members", "need at least one traveler")
        interests = _need(doc, "interests", list)
        for i, item in enumerate(interests):
            if not isinstance(item, str) or not item.strip():
                raise SchemaError(f"interests[{i}]", "must be nonempty text")
        payload = TravelPlanPayload(
            destination=_need_str(doc, "destination"),
            days=days,
            description=_need_str(doc, "description"),
            season=_need_str(doc, "season"),
            month=_need_str(doc, "month"),
            interests=tuple(s.strip() for s in interests),
            members=Members(adults=adults, children=children),
            preferences=_need_str(doc, "preferences"),
            budget_range=_need_str(doc, "budget_range"),
        )
    return TaskQuery(task_kind=kind, task_id=task_id, payload=payload)


def serialize_task(task: TaskQuery) -> dict[str, Any]:
    """Inverse of validate_task over the covered fields."""
    if task.task_kind == "creative_writing":
        p = task.payload
        assert isinstance(p, CreativeWritingPayload)
        return {
            "kind": task.task_kind,
            "task_id": task.task_id,
            "topic": p.topic,
            "questions": list(p.questions),
            "answers": [list(s.aliases) for s in p.answer_sets],
        }
    p = task.payload
    assert isinstance(p, TravelPlanPayload)
    return {
        "kind": task.task_kind,
        "task_id": task.task_id,
        "destination": p.destination,
        "days": p.days,
        "description": p.description,
        "season": p.season,
        "month": p.month,
        "interests": list(p.interests),
        "members": {"adults": p.members.adults, "children": p.members.children},
        "preferences": p.preferences,
        "budget_range": p.budget_range,
    }


def render_task_text(task: TaskQuery) -> str:
    """Canonical plain-text form of the task, as fed into prompts.

    Deterministic; the creative-writing form never embeds the answers.
    """
    if task.task_kind == "creative_writing":
        p = task.payload
        assert isinstance(p, CreativeWritingPayload)
        joined = " ".join(p.questions)
        return (
            f"Write a short and coherent story about {p.topic} that incorporates "
            f"the answers to the following {len(p.questions)} questions: {joined}"
        )
    p = task.payload
    assert isinstance(p, TravelPlanPayload)
    return "\n".join(
        [
            f"destination:{p.destination}",
            f"days:{p.days}",
            f"description:{p.description}",
            f"season:{p.season}",
            f"month:{p.month}",
            f"interests:{', '.join(p.interests)}",
            f"members:adults:{p.members.adults}, children:{p.members.children}",
            f"preferences:{p.preferences}",
            f"Budget Range:{p.budget_range}",
        ]
    )


@dataclass(frozen=True)
class AgentRole:
    """Identity of one agent in a run. Index 0 is the leader."""

    index: int
    role_name: str
    kind: str  # leader | crew | evaluator

    def __post_init__(self) -> None:
        if self.kind not in ("leader", "crew", "evaluator"):
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.kind == "crew" and not self.role_name:
            raise ValueError("crew agents need a role name")


@dataclass(frozen=True)
class SubTaskInstruction:
    """One leader-assigned sub-task."""

    crew_index: int
    role_name: str
    instruction_text: str

    def __post_init__(self) -> None:
        if self.crew_index < 1:
            raise ValueError("crew_index starts at 1")
        if not self.instruction_text.strip():
            raise ValueError("instruction_text must be nonempty")


@dataclass(frozen=True)
class TurnResponse:
    """One crew agent's response at one turn."""

    crew_index: int
    turn: int
    text: str

    def __post_init__(self) -> None:
        if self.turn < 0:
            raise ValueError("turn must be >= 0")
        if not self.text:
            raise ValueError("response text must be nonempty")


REVIEW_KINDS = ("self", "peer", "supervisory", "leader_self")


@dataclass(frozen=True)
class Review:
    """One review of one agent's output at one turn."""

    kind: str
    reviewer: int
    reviewee: int
    turn: int
    text: str

    def __post_init__(self) -> None:
        if self.kind not in REVIEW_KINDS:
            raise ValueError(f"unknown review kind {self.kind!r}")
        if not self.text:
            raise ValueError("review text must be nonempty")
        if self.kind == "self" and (self.reviewer != self.reviewee or self.reviewer < 1):
            raise ValueError("self review must pair a crew agent with itself")
        if self.kind == "peer" and (
            self.reviewer == self.reviewee or self.reviewer < 1 or self.reviewee < 1
        ):
            raise ValueError("peer review needs two distinct crew agents")
        if self.kind == "supervisory" and (self.reviewer != 0 or self.reviewee < 1):
            raise ValueError("supervisory review is leader -> crew")
        if self.kind == "leader_self" and (self.reviewer != 0 or self.reviewee != 0):
            raise ValueError("leader self review pairs the leader with itself")


@dataclass(frozen=True)
class ReviewSet:
    """All reviews targeting one crew agent at one turn.

    Disabled review kinds are absent (None / empty tuple), never
    placeholder text.
    """

    crew_index: int
    turn: int
    self_review: Review | None
    peer_reviews: tuple[Review, ...]
    supervisory_review: Review | None

    def is_empty(self) -> bool:
        return (
            self.self_review is None
            and not self.peer_reviews
            and self.supervisory_review is None
        )

    def in_canonical_order(self) -> tuple[Review, ...]:
        """Self first, then peers by reviewer index, then supervisory."""
        out: list[Review] = []
        if self.self_review is not None:
            out.append(self.self_review)
        out.extend(sorted(self.peer_reviews, key=lambda r: r.reviewer))
        if self.supervisory_review is not None:
            out.append(self.supervisory_review)
        return tuple(out)


@dataclass(frozen=True)
class Experience:
    """One distilled lesson, local (per agent, per run) or global."""

    level: str  # local | global
    text: str
    origin_run_id: str
    origin_agent: int | None
    origin_turn: int | None
    created_seq: int

    def __post_init__(self) -> None:
        if self.level not in ("local", "global"):
            raise ValueError(f"unknown experience level {self.level!r}")
        if not self.text:
            raise ValueError("experience text must be nonempty")
        if self.level == "local" and (self.origin_agent is None or self.origin_turn is None):
            raise ValueError("local experiences carry agent and turn")
        if self.level == "global" and (
            self.origin_agent is not None or self.origin_turn is not None
        ):
            raise ValueError("global experiences carry no agent or turn")


@dataclass(frozen=True)
class CriterionScore:
    name: str
    score: int
    rationale: str

    def __post_init__(self) -> None:
        if not 1 <= self.score <= 20:
            raise ValueError(f"score {self.score} outside [1, 20]")


@dataclass(frozen=True)
class EvaluationReport:
    """Evaluator output: per-criterion 1-20 scores plus the raw text."""

    criteria: tuple[CriterionScore, ...]
    overall_text: str

    def score_of(self, name: str) -> int:
        for c in self.criteria:
            if c.name == name:
                return c.score
        raise KeyError(name)


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one run. Defaults follow the reference setup:
    2 assessment turns, 3-5 crews, 10 global experiences, temperature 1.0."""

    turns: int = 2
    crew_min: int = 3
    crew_max: int = 5
    global_select_k: int = 10
    temperature: float = 1.0
    ablations: frozenset[str] = frozenset()
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.turns < 1:
            raise SchemaError("turns", "must be >= 1")
        if not 1 <= self.crew_min <= self.crew_max:
            raise SchemaError("crew_min", "need 1 <= crew_min <= crew_max")
        if self.global_select_k < 0:
            raise SchemaError("global_k", "must be >= 0")
        unknown = set(self.ablations) - set(ABLATION_FLAGS)
        if unknown:
            raise SchemaError("ablations", f"unknown flags {sorted(unknown)}")

    @property
    def assessment_on(self) -> bool:
        return "no_360" not in self.ablations

    @property
    def self_on(self) -> bool:
        return self.assessment_on and "no_self" not in self.ablations

    @property
    def peer_on(self) -> bool:
        return self.assessment_on and "no_peer" not in self.ablations

    @property
    def supervisory_on(self) -> bool:
        return self.assessment_on and "no_supervisory" not in self.ablations

    @property
    def local_exp_on(self) -> bool:
        return not self.ablations & {"no_exp_pool", "no_local_exp"}

    @property
    def global_exp_on(self) -> bool:
        return not self.ablations & {"no_exp_pool", "no_global_exp"}

    def effective_ablations(self) -> tuple[str, ...]:
        """Flags with implications expanded (no_exp_pool and no_360 fan out)."""
        flags = set(self.ablations)
        if "no_exp_pool" in flags:
            flags |= {"no_global_exp", "no_local_exp"}
        if "no_360" in flags:
            flags |= {"no_peer", "no_self", "no_supervisory"}
        return tuple(sorted(flags))

    def snapshot(self) -> dict[str, Any]:
        return {
            "turns": self.turns,
            "crew_min": self.crew_min,
            "crew_max": self.crew_max,
            "global_select_k": self.global_select_k,
            "temperature": self.temperature,
            "ablations": sorted(self.ablations),
            "seed": self.seed,
        }


class RunTranscript:
    """Ordered, replayable record of one run.

    Events are {seq, event_kind, payload} dicts with seq dense from 0;
    appends are serialized through one lock so concurrent callers get a
    total order.
    """

    def __init__(self, run_id: str, task_id: str, config: dict[str, Any]) -> None:
        self.run_id = run_id
        self.task_id = task_id
        self.config = config
        self.events: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def append(self, event_kind: str, payload: dict[str, Any]) -> int:
        with self._lock:
            seq = len(self.events)
            self.events.append({"seq": seq, "event_kind": event_kind, "payload": payload})
            return seq

    def backend_calls(self, call_kind: str | None = None) -> list[dict[str, Any]]:
        calls = [e for e in self.events if e["event_kind"] == "backend_call"]
        if call_kind is not None:
            calls = [e for e in calls if e["payload"]["call_kind"] == call_kind]
        return calls

    def call_count(self) -> int:
        return len(self.backend_calls())

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, ensure_ascii=False) + "\n" for e in self.events)

    def write_jsonl(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")

    @staticmethod
    def read_jsonl(path: Path) -> "RunTranscript":
        events = []
        with path.open("r", encoding="utf-8") as f:
            for line_no, line in enumerate(f):
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"transcript line {line_no}", str(exc)) from exc
        if not events or events[0].get("event_kind") != "run_start":
            raise SchemaError("transcript", "first event must be run_start")
        head = events[0]["payload"]
        transcript = RunTranscript(head["run_id"], head["task_id"], head["config"])
        transcript.events = events
        return transcript
