"""Answer-coverage scoring for stories and the rubric evaluator.

The match rate is a pure string metric: a question counts as covered
when any alias of its ground-truth answer occurs in the story after
normalization (lowercasing, whitespace collapsing, and stripping of the
alias's edge punctuation). Rubric scores come from a judge call on a
1-20 scale and are normalized to percentages for reporting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from . import prompts
from .backend import Gateway
from .domain import (
    AnswerSet,
    CreativeWritingPayload,
    CriterionScore,
    EvaluationReport,
    TaskQuery,
    normalize_alias,
    normalize_match_text,
    render_task_text,
)
from .errors import EmptyInputError, MixedKindError, ScoreParseError, ScoreRangeError

if TYPE_CHECKING:
    from .orchestrator import RunOutcome


@dataclass(frozen=True)
class RubricCriterion:
    """One judged aspect, scored on the fixed 1-20 scale."""

    name: str  # short label used in reports, e.g. "P.Cu."
    label: str  # printed name the evaluator writes scores against
    description: str
    scale_min: int = 1
    scale_max: int = 20


CREATIVE_RUBRIC = (
    RubricCriterion(
        "E.E.",
        "Emotional Engagement",
        "whether the story evokes the reader's emotion and empathy",
    ),
    RubricCriterion(
        "Ins",
        "Insightfulness",
        "whether the story carries an insightful plot and causes a profound impact on readers",
    ),
)

TRAVEL_RUBRIC = (
    RubricCriterion(
        "P.Cu.",
        "Plan Customization",
        "whether the plan is customized to the personal interests and preferences of the traveler",
    ),
    RubricCriterion(
        "P.N.",
        "Plan Novelty",
        "whether the plan is novel and creative",
    ),
    RubricCriterion(
        "P.Co.",
        "Plan Correctness",
        "whether the plan covers all required details and the plan is reasonable",
    ),
)


def rubric_for_kind(task_kind: str) -> tuple[RubricCriterion, ...]:
    return CREATIVE_RUBRIC if task_kind == "creative_writing" else TRAVEL_RUBRIC


def _alias_found(alias: str, story_norm: str, word_boundary: bool) -> bool:
    if word_boundary:
        pattern = rf"(?<![a-z0-9]){re.escape(alias)}(?![a-z0-9])"
        return re.search(pattern, story_norm) is not None
    return alias in story_norm


def match_rate(
    story: str, answer_sets: list[AnswerSet] | tuple[AnswerSet, ...], *, word_boundary: bool = False
) -> float:
    """Percentage of questions whose answer (any alias) occurs in the story.

    Substring matching by default; word_boundary=True refuses matches
    embedded inside longer words.
    """
    if not answer_sets:
        raise ValueError("need at least one answer set")
    story_norm = normalize_match_text(story)
    matched = 0
    for answer_set in answer_sets:
        aliases = [normalize_alias(a) for a in answer_set.aliases]
        if any(a and _alias_found(a, story_norm, word_boundary) for a in aliases):
            matched += 1
    return 100.0 * matched / len(answer_sets)


def match_breakdown(
    story: str, answer_sets: list[AnswerSet] | tuple[AnswerSet, ...]
) -> list[bool]:
    """Per-question matched flags, in question order."""
    story_norm = normalize_match_text(story)
    return [
        any(_alias_found(normalize_alias(a), story_norm, False) for a in s.aliases)
        for s in answer_sets
    ]


def normalize_score(score: int) -> float:
    """Map a 1-20 rubric score onto a percentage."""
    if not isinstance(score, int) or isinstance(score, bool) or not 1 <= score <= 20:
        raise ScoreRangeError(f"score {score!r} outside [1, 20]")
    return 100.0 * score / 20.0


def parse_scores(text: str, rubric: tuple[RubricCriterion, ...]) -> tuple[CriterionScore, ...]:
    """Pull per-criterion integer scores out of raw evaluator text.

    Accepts lines like "Plan Novelty (1-20): 15" or "Plan Novelty: 15";
    the text between one score line and the next criterion is kept as
    that criterion's rationale.
    """
    hits: list[tuple[str, int, int, int]] = []  # (name, score, start, end)
    for criterion in rubric:
        pattern = re.compile(
            rf"{re.escape(criterion.label)}\s*(?:\(\s*1\s*-\s*20\s*\))?\s*:\s*(-?\d+)",
            re.IGNORECASE,
        )
        match = pattern.search(text)
        if match is None:
            raise ScoreParseError(criterion.name, f"no score line for {criterion.label!r}")
        value = int(match.group(1))
        if not 1 <= value <= 20:
            raise ScoreParseError(criterion.name, f"score {value} outside [1, 20]")
        hits.append((criterion.name, value, match.start(), match.end()))

    boundaries = sorted(start for _, _, start, _ in hits)
    scores = []
    for name, value, start, end in hits:
        nxt = min((b for b in boundaries if b > start), default=len(text))
        rationale = text[end:nxt].strip()
        scores.append(CriterionScore(name=name, score=value, rationale=rationale))
    return tuple(scores)


def evaluate_rubric(
    gateway: Gateway, task: TaskQuery, answer: str, rubric: tuple[RubricCriterion, ...]
) -> EvaluationReport:
    """One judge call over the task text and the final answer."""
    task_text = render_task_text(task)
    if task.task_kind == "travel_plan":
        prompt = prompts.render(
            "evaluator_travel", {"total_task": task_text, "Travel_Plan": answer}
        )
    else:
        prompt = prompts.render("evaluator_writing", {"total_task": task_text, "Story": answer})
    raw = gateway.call("evaluate", prompt)
    return EvaluationReport(criteria=parse_scores(raw, rubric), overall_text=raw)


def run_metrics(task: TaskQuery, answer: str, report: EvaluationReport) -> dict[str, float]:
    """The per-run metric dict: M% plus rubric percentages for stories,
    rubric percentages alone for travel plans."""
    metrics: dict[str, float] = {}
    if task.task_kind == "creative_writing":
        payload = task.payload
        assert isinstance(payload, CreativeWritingPayload)
        metrics["M%"] = match_rate(answer, payload.answer_sets)
    for criterion in report.criteria:
        metrics[criterion.name] = normalize_score(criterion.score)
    return metrics


def batch_report(outcomes: list["RunOutcome"]) -> dict[str, dict[str, Any]]:
    """Per-metric mean and count over a batch of same-kind outcomes."""
    if not outcomes:
        raise EmptyInputError("no outcomes to aggregate")
    kinds = {o.task_kind for o in outcomes}
    if len(kinds) > 1:
        raise MixedKindError(f"mixed task kinds in one batch: {sorted(kinds)}")
    names: list[str] = []
    for outcome in outcomes:
        for name in outcome.metrics:
            if name not in names:
                names.append(name)
    table: dict[str, dict[str, Any]] = {}
    for name in names:
        values = [o.metrics[name] for o in outcomes if name in o.metrics]
        table[name] = {"mean": sum(values) / len(values), "n": len(values)}
    return table
