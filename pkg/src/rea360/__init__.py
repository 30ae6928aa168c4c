"""Hierarchical multi-agent orchestration with three-level (self, peer,
supervisory) assessment and dual-level experience accumulation."""

from .backend import (
    CompletionRequest,
    CompletionResult,
    Gateway,
    HttpBackend,
    Message,
    ScriptedBackend,
    ScriptedRule,
    load_rules,
)
from .domain import (
    AnswerSet,
    EvaluationReport,
    Experience,
    Review,
    ReviewSet,
    RunConfig,
    RunTranscript,
    SubTaskInstruction,
    TaskQuery,
    TurnResponse,
    render_task_text,
    serialize_task,
    validate_task,
)
from .experience import ExperiencePool, select_global
from .metrics import batch_report, match_rate, normalize_score
from .orchestrator import RunOutcome, expected_call_count, run_task

__version__ = "0.1.0"

__all__ = [
    "AnswerSet",
    "CompletionRequest",
    "CompletionResult",
    "EvaluationReport",
    "Experience",
    "ExperiencePool",
    "Gateway",
    "HttpBackend",
    "Message",
    "Review",
    "ReviewSet",
    "RunConfig",
    "RunOutcome",
    "RunTranscript",
    "ScriptedBackend",
    "ScriptedRule",
    "SubTaskInstruction",
    "TaskQuery",
    "TurnResponse",
    "batch_report",
    "expected_call_count",
    "load_rules",
    "match_rate",
    "normalize_score",
    "render_task_text",
    "run_task",
    "select_global",
    "serialize_task",
    "validate_task",
]
