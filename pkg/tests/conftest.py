"""Shared fixtures: scripted rule tables, task fixtures, and gateways."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from rea360.backend import Gateway, ScriptedBackend, ScriptedRule
from rea360.domain import RunConfig, RunTranscript, TaskQuery, validate_task

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

CREW_ROLES = (
    "plot architect",
    "character writer",
    "continuity editor",
    "imagery specialist",
    "dialogue writer",
)


def decompose_blocks(n_crews: int) -> str:
    lines = []
    for i in range(n_crews):
        lines.append(f"{i + 1}. Role: {CREW_ROLES[i % len(CREW_ROLES)]} {i + 1}")
        lines.append(f"   Instruction: Handle part {i + 1} of the task end to end.")
    return "\n".join(lines)


def echo_rules(n_crews: int = 3) -> list[ScriptedRule]:
    """Rule table driving a full run: parsable decomposition, structured
    local experiences, parsable evaluator scores, echo for the rest."""
    return [
        ScriptedRule(call_kind="decompose", response=decompose_blocks(n_crews)),
        ScriptedRule(
            call_kind="local_exp",
            response="Role: crew {reviewee}\nExperience: lesson {seq} from turn {turn}",
        ),
        ScriptedRule(
            call_kind="evaluate",
            pattern="evaluate the travel plan",
            response=(
                "Plan Customization (1-20): 18\nfits the group\n"
                "Plan Novelty (1-20): 15\nsome standard stops\n"
                "Plan Correctness (1-20): 17\ndense but workable"
            ),
        ),
        ScriptedRule(
            call_kind="evaluate",
            response=(
                "Emotional Engagement (1-20): 17\nquiet beats land\n"
                "Insightfulness (1-20): 15\nclear throughline"
            ),
        ),
        ScriptedRule(response="ECHO {call_kind}/{reviewee}/{turn}"),
    ]


def echo_backend(n_crews: int = 3) -> ScriptedBackend:
    return ScriptedBackend(echo_rules(n_crews))


def make_gateway(
    backend: ScriptedBackend | None = None, run_id: str = "test-run"
) -> tuple[Gateway, RunTranscript]:
    transcript = RunTranscript(run_id, "test-task", RunConfig().snapshot())
    gateway = Gateway(backend or echo_backend(), transcript, run_id=run_id)
    return gateway, transcript


def load_fixture_task(name: str) -> TaskQuery:
    return validate_task(json.loads((FIXTURES / name).read_text(encoding="utf-8")))


@pytest.fixture
def zelda_task() -> TaskQuery:
    return load_fixture_task("task_trivia_zelda.json")


@pytest.fixture
def travel_task() -> TaskQuery:
    return load_fixture_task("task_travel_barcelona.json")


@pytest.fixture
def workspace(tmp_path: Path) -> Path:
    ws = tmp_path / "ws"
    ws.mkdir()
    return ws
