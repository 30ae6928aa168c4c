"""The workflow engine: task decomposition, multi-turn generation with
assessment rounds and local-experience distillation in between, leader
synthesis with a self-review pass, rubric evaluation, and global
experience accumulation.

Canonical schedule (T assessment turns means T+1 generation passes):

    decompose
    generate turn 0
    for t in 1..T:
        assessment round over turn t-1 responses
        local experience per crew (from that round)
        generate turn t (revision)
    synthesize: draft -> leader self-review -> final
    evaluate
    global experience, appended to the workspace pool
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import assessment, experience, metrics, prompts
from .backend import Backend, Gateway
from .domain import (
    EvaluationReport,
    Experience,
    ReviewSet,
    RunConfig,
    RunTranscript,
    SubTaskInstruction,
    TaskQuery,
    TurnResponse,
    render_task_text,
)
from .errors import CrewCountError, ParseError

GLOBAL_EXP_HEADER = "Useful experiences from earlier tasks:"
LOCAL_EXP_HEADER = "Your own experiences so far in this task:"
REVIEWS_HEADER = "Reviews of your previous response:"
DRAFT_REVIEW_HEADER = "Your own review of this draft:"

_ROLE_LINE_RE = re.compile(r"^\s*(?:\d+\s*[.)]\s*)?Role\s*:\s*(.+?)\s*$", re.IGNORECASE)
_INSTR_LINE_RE = re.compile(r"^\s*Instruction\s*:\s*(.*?)\s*$", re.IGNORECASE)

_FORMAT_REMINDER = (
    "Reminder: output only numbered blocks, each in exactly this format:\n"
    "1. Role: [role name]\n"
    "   Instruction: [what this crew agent must do]\n"
    "Create between {crew_min} and {crew_max} blocks."
)


def parse_decomposition(text: str) -> list[SubTaskInstruction]:
    """Parse the leader's "Role: / Instruction:" blocks into instructions.

    Raises ParseError when no complete block is found.
    """
    blocks: list[tuple[str, list[str]]] = []
    current_instr: list[str] | None = None
    for line in text.splitlines():
        role_match = _ROLE_LINE_RE.match(line)
        if role_match:
            current_instr = None
            blocks.append((role_match.group(1), []))
            continue
        instr_match = _INSTR_LINE_RE.match(line)
        if instr_match and blocks:
            current_instr = blocks[-1][1]
            if instr_match.group(1):
                current_instr.append(instr_match.group(1))
            continue
        if current_instr is not None and line.strip():
            current_instr.append(line.strip())
    instructions = []
    for i, (role, instr_lines) in enumerate(blocks, start=1):
        instr = " ".join(instr_lines).strip()
        if not role.strip() or not instr:
            raise ParseError(f"block {i} is missing a role or instruction")
        instructions.append(
            SubTaskInstruction(crew_index=i, role_name=role.strip(), instruction_text=instr)
        )
    if not instructions:
        raise ParseError("no 'Role: / Instruction:' blocks found")
    return instructions


def decompose(gateway: Gateway, task: TaskQuery, config: RunConfig) -> list[SubTaskInstruction]:
    """Leader call splitting the task into role-tagged sub-tasks.

    Re-prompts with a format reminder up to twice on parse or crew-count
    failures, then raises.
    """
    base_prompt = prompts.render(
        "decompose",
        {
            "task": render_task_text(task),
            "crew_min": str(config.crew_min),
            "crew_max": str(config.crew_max),
        },
    )
    reminder = _FORMAT_REMINDER.format(crew_min=config.crew_min, crew_max=config.crew_max)
    last_error: ParseError | None = None
    for attempt in range(3):
        prompt = base_prompt if attempt == 0 else f"{base_prompt}\n\n{reminder}"
        text = gateway.call("decompose", prompt)
        try:
            instructions = parse_decomposition(text)
        except ParseError as exc:
            last_error = exc
            continue
        if not config.crew_min <= len(instructions) <= config.crew_max:
            last_error = CrewCountError(len(instructions), config.crew_min, config.crew_max)
            continue
        return instructions
    assert last_error is not None
    raise last_error


def _section(header: str, body: str) -> str:
    return f"\n{header}\n{body}\n"


def _experience_block(entries: list[Experience]) -> str:
    return "\n".join(f"- {e.text}" for e in entries)


def _reviews_block(reviews: ReviewSet) -> str:
    parts = []
    for review in reviews.in_canonical_order():
        if review.kind == "self":
            label = "Self review:"
        elif review.kind == "peer":
            label = f"Peer review from crew {review.reviewer}:"
        else:
            label = "Supervisory review from the leader:"
        parts.append(f"{label}\n{review.text}")
    return "\n\n".join(parts)


def generate_response(
    gateway: Gateway,
    instruction: SubTaskInstruction,
    turn: int,
    global_sel: list[Experience],
    local: list[Experience],
    prior_reviews: ReviewSet | None,
) -> TurnResponse:
    """One generation (or revision) pass for one crew agent.

    The prompt embeds the instruction, the selected global experiences,
    the agent's local experiences, and the previous turn's reviews, each
    section omitted entirely when empty or disabled.
    """
    global_section = (
        _section(GLOBAL_EXP_HEADER, _experience_block(global_sel)) if global_sel else ""
    )
    local_section = _section(LOCAL_EXP_HEADER, _experience_block(local)) if local else ""
    reviews_section = ""
    if prior_reviews is not None and not prior_reviews.is_empty():
        reviews_section = _section(REVIEWS_HEADER, _reviews_block(prior_reviews))
    prompt = prompts.render(
        "crew_generate",
        {
            "role": instruction.role_name,
            "instruction": instruction.instruction_text,
            "global_exp_section": global_section,
            "local_exp_section": local_section,
            "reviews_section": reviews_section,
        },
    )
    text = gateway.call("generate", prompt, crew=instruction.crew_index, turn=turn)
    return TurnResponse(crew_index=instruction.crew_index, turn=turn, text=text)


def synthesize(
    gateway: Gateway,
    final_responses: list[TurnResponse],
    global_sel: list[Experience],
    config: RunConfig,
) -> str:
    """Leader synthesis: draft from the crew responses, a self-review of
    the draft, then the final answer. The self-review pass is skipped
    when assessment is ablated."""
    ordered = sorted(final_responses, key=lambda r: r.crew_index)
    material = "\n\n".join(f"Crew {r.crew_index} response:\n{r.text}" for r in ordered)
    global_section = (
        _section(GLOBAL_EXP_HEADER, _experience_block(global_sel)) if global_sel else ""
    )
    draft = gateway.call(
        "synthesize_draft",
        prompts.render(
            "synthesize",
            {
                "material": material,
                "global_exp_section": global_section,
                "review_section": "",
            },
        ),
    )
    review_section = ""
    if config.assessment_on:
        self_review = gateway.call(
            "leader_self", prompts.render("leader_self", {"draft": draft})
        )
        review_section = _section(DRAFT_REVIEW_HEADER, self_review)
    return gateway.call(
        "synthesize_final",
        prompts.render(
            "synthesize",
            {
                "material": draft,
                "global_exp_section": "",
                "review_section": review_section,
            },
        ),
    )


def expected_call_count(n_crews: int, turns: int, ablations: frozenset[str] | set[str]) -> int:
    """Closed-form backend-call count for one run under the canonical
    schedule; the transcript of a scripted run must agree exactly."""
    if n_crews < 1 or turns < 1:
        raise ValueError("need n_crews >= 1 and turns >= 1")
    flags = set(ablations)
    assess = "no_360" not in flags
    self_on = assess and "no_self" not in flags
    peer_on = assess and "no_peer" not in flags
    supervisory_on = assess and "no_supervisory" not in flags
    pool_off = "no_exp_pool" in flags
    local_on = not pool_off and "no_local_exp" not in flags
    global_on = not pool_off and "no_global_exp" not in flags

    count = 1  # decompose
    count += n_crews * (turns + 1)  # generation passes
    per_round = 0
    if self_on:
        per_round += n_crews
    if peer_on:
        per_round += n_crews * (n_crews - 1)
    if supervisory_on:
        per_round += n_crews
    count += turns * per_round
    if local_on:
        count += turns * n_crews
    count += 2 + (1 if assess else 0)  # draft, final, and the leader self-review
    count += 1  # evaluate
    if global_on:
        count += 1
    return count


@dataclass
class RunOutcome:
    """Everything one run produced."""

    run_id: str
    task_id: str
    task_kind: str
    final_answer: str
    report: EvaluationReport
    metrics: dict[str, float]
    transcript: RunTranscript
    global_delta: list[Experience] = field(default_factory=list)
    local_pools: dict[int, list[Experience]] = field(default_factory=dict)

    @property
    def call_count(self) -> int:
        return self.transcript.call_count()

    def summary(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "task_id": self.task_id,
            "task_kind": self.task_kind,
            "final_answer": self.final_answer,
            "evaluation": {
                "criteria": [
                    {"name": c.name, "score": c.score, "rationale": c.rationale}
                    for c in self.report.criteria
                ],
                "overall_text": self.report.overall_text,
            },
            "metrics": self.metrics,
            "call_count": self.call_count,
            "global_experiences_appended": [e.text for e in self.global_delta],
            "local_pool_sizes": {str(k): len(v) for k, v in sorted(self.local_pools.items())},
        }


def pool_path(workspace: Path) -> Path:
    return workspace / "experience_pool.json"


def transcript_path(workspace: Path, run_id: str) -> Path:
    return workspace / "runs" / f"{run_id}.jsonl"


def summary_path(workspace: Path, run_id: str) -> Path:
    return workspace / "runs" / f"{run_id}.summary.json"


def run_task(
    task: TaskQuery,
    config: RunConfig,
    workspace: Path,
    backend: Backend,
    *,
    run_id: str | None = None,
    model_id: str | None = None,
) -> RunOutcome:
    """Execute one task end to end against the given backend.

    Writes runs/{run_id}.jsonl and runs/{run_id}.summary.json under the
    workspace and appends one global experience to the workspace pool.
    On failure the partial transcript is written with a failure marker
    and the pool file is left untouched.
    """
    run_id = run_id or task.task_id
    transcript = RunTranscript(run_id, task.task_id, config.snapshot())
    transcript.append(
        "run_start",
        {"run_id": run_id, "task_id": task.task_id, "config": config.snapshot()},
    )
    gateway = Gateway(
        backend,
        transcript,
        run_id=run_id,
        temperature=config.temperature,
        **({"model_id": model_id} if model_id else {}),
    )

    global_pool = experience.load_or_empty(pool_path(workspace))
    global_sel = (
        experience.select_global(global_pool, config.global_select_k)
        if config.global_exp_on
        else []
    )

    stage = "decompose"
    try:
        instructions = decompose(gateway, task, config)
        transcript.append(
            "decomposition",
            {
                "sub_tasks": [
                    {
                        "crew_index": inst.crew_index,
                        "role_name": inst.role_name,
                        "instruction": inst.instruction_text,
                    }
                    for inst in instructions
                ]
            },
        )
        local_pools = {
            inst.crew_index: experience.new_local_pool(run_id, inst.crew_index)
            for inst in instructions
        }

        stage = "generate turn 0"
        responses: dict[int, TurnResponse] = {}
        for inst in instructions:
            resp = generate_response(gateway, inst, 0, global_sel, [], None)
            responses[inst.crew_index] = resp
            transcript.append(
                "turn_response",
                {"crew_index": resp.crew_index, "turn": resp.turn, "text": resp.text},
            )

        for t in range(1, config.turns + 1):
            stage = f"assessment round over turn {t - 1}"
            review_sets = assessment.run_round(gateway, t - 1, instructions, responses, config)
            sets_by_crew = {s.crew_index: s for s in review_sets}
            for s in review_sets:
                transcript.append(
                    "review_set",
                    {
                        "crew_index": s.crew_index,
                        "turn": s.turn,
                        "reviews": [
                            {"kind": r.kind, "reviewer": r.reviewer, "text": r.text}
                            for r in s.in_canonical_order()
                        ],
                    },
                )

            if config.local_exp_on:
                stage = f"local experience after turn {t - 1}"
                for inst in instructions:
                    exp, parsed = experience.build_local_experience(
                        gateway,
                        inst.crew_index,
                        inst.role_name,
                        responses[inst.crew_index],
                        sets_by_crew[inst.crew_index],
                        local_pools[inst.crew_index],
                    )
                    transcript.append(
                        "local_experience",
                        {
                            "agent_index": inst.crew_index,
                            "turn": t - 1,
                            "text": exp.text,
                            "parsed": parsed,
                        },
                    )

            stage = f"generate turn {t}"
            for inst in instructions:
                resp = generate_response(
                    gateway,
                    inst,
                    t,
                    global_sel,
                    local_pools[inst.crew_index].entries,
                    sets_by_crew[inst.crew_index],
                )
                responses[inst.crew_index] = resp
                transcript.append(
                    "turn_response",
                    {"crew_index": resp.crew_index, "turn": resp.turn, "text": resp.text},
                )

        stage = "synthesize"
        finals = [responses[inst.crew_index] for inst in instructions]
        answer = synthesize(gateway, finals, global_sel, config)
        transcript.append("final_answer", {"text": answer})

        stage = "evaluate"
        report = metrics.evaluate_rubric(
            gateway, task, answer, metrics.rubric_for_kind(task.task_kind)
        )
        transcript.append(
            "evaluation",
            {
                "criteria": [
                    {"name": c.name, "score": c.score} for c in report.criteria
                ],
                "overall_text": report.overall_text,
            },
        )
        run_metric_values = metrics.run_metrics(task, answer, report)

        global_delta: list[Experience] = []
        if config.global_exp_on:
            stage = "global experience"
            text = experience.distill_global_experience(gateway, report, finals)
            appended = experience.append_global_and_persist(
                pool_path(workspace), text, origin_run_id=run_id
            )
            transcript.append(
                "global_experience",
                {"text": appended.text, "created_seq": appended.created_seq},
            )
            global_delta.append(appended)

        transcript.append(
            "run_completed", {"status": "success", "metrics": run_metric_values}
        )
    except Exception as exc:
        transcript.append("run_failed", {"stage": stage, "error": str(exc)})
        transcript.write_jsonl(transcript_path(workspace, run_id))
        raise

    transcript.write_jsonl(transcript_path(workspace, run_id))
    outcome = RunOutcome(
        run_id=run_id,
        task_id=task.task_id,
        task_kind=task.task_kind,
        final_answer=answer,
        report=report,
        metrics=run_metric_values,
        transcript=transcript,
        global_delta=global_delta,
        local_pools={k: list(p.entries) for k, p in local_pools.items()},
    )
    out_path = summary_path(workspace, run_id)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(
        json.dumps(outcome.summary(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return outcome
