"""Assessment rounds: review cardinalities, canonical ordering, ablations."""

from __future__ import annotations

import pytest

from rea360.assessment import (
    assemble_review_set,
    peer_assess,
    run_round,
    self_assess,
    supervisory_assess,
)
from rea360.domain import Review, RunConfig, SubTaskInstruction, TurnResponse
from rea360.errors import CardinalityError, InvalidPairError

from .conftest import make_gateway


def _instructions(n: int) -> list[SubTaskInstruction]:
    return [
        SubTaskInstruction(crew_index=i, role_name=f"role {i}", instruction_text=f"do part {i}")
        for i in range(1, n + 1)
    ]


def _responses(n: int, turn: int = 0) -> dict[int, TurnResponse]:
    return {
        i: TurnResponse(crew_index=i, turn=turn, text=f"response of crew {i}")
        for i in range(1, n + 1)
    }


def test_self_assess_scripted_echo():
    gateway, transcript = make_gateway()
    instruction = _instructions(1)[0]
    response = TurnResponse(crew_index=1, turn=1, text="draft one")
    review = self_assess(gateway, 1, response, instruction)
    assert review.text == "ECHO assess_self/1/1"
    assert review.kind == "self" and review.reviewer == review.reviewee == 1
    prompt = transcript.backend_calls()[0]["payload"]["request"]["messages"][0]["content"]
    assert "draft one" in prompt and "do part 1" in prompt


def test_peer_assess_scripted_echo_and_inputs():
    gateway, transcript = make_gateway()
    instructions = _instructions(3)
    responses = _responses(3, turn=2)
    review = peer_assess(gateway, 2, responses[2], responses[3], instructions[2])
    assert review.text == "ECHO assess_peer/3/2"
    assert (review.reviewer, review.reviewee) == (2, 3)
    prompt = transcript.backend_calls()[0]["payload"]["request"]["messages"][0]["content"]
    assert "response of crew 2" in prompt  # reviewer's own response
    assert "response of crew 3" in prompt  # reviewee response
    assert "do part 3" in prompt  # reviewee instruction


def test_peer_assess_rejects_self_pair():
    gateway, _ = make_gateway()
    instructions = _instructions(2)
    responses = _responses(2)
    with pytest.raises(InvalidPairError):
        peer_assess(gateway, 1, responses[1], responses[1], instructions[0])


def test_supervisory_assess_scripted_echo():
    gateway, transcript = make_gateway()
    instruction = _instructions(4)[3]
    response = TurnResponse(crew_index=4, turn=1, text="crew four text")
    review = supervisory_assess(gateway, response, instruction)
    assert review.text == "ECHO assess_supervisory/4/1"
    assert review.reviewer == 0 and review.reviewee == 4
    prompt = transcript.backend_calls()[0]["payload"]["request"]["messages"][0]["content"]
    assert "crew four text" in prompt and "do part 4" in prompt


def test_round_counts_all_levels_on():
    gateway, transcript = make_gateway()
    sets = run_round(gateway, 0, _instructions(3), _responses(3), RunConfig())
    assert transcript.call_count() == 12  # 3 self + 6 peer + 3 supervisory
    assert len(sets) == 3
    for s in sets:
        assert s.self_review is not None
        assert len(s.peer_reviews) == 2
        assert s.supervisory_review is not None


def test_round_produces_all_ordered_peer_pairs():
    gateway, transcript = make_gateway()
    run_round(gateway, 0, _instructions(3), _responses(3), RunConfig())
    pairs = {
        (e["payload"]["reviewer"], e["payload"]["crew"])
        for e in transcript.backend_calls("assess_peer")
    }
    assert pairs == {(i, j) for i in range(1, 4) for j in range(1, 4) if i != j}


def test_round_canonical_transcript_order():
    gateway, transcript = make_gateway()
    run_round(gateway, 1, _instructions(3), _responses(3, turn=1), RunConfig())
    observed = [
        (e["payload"]["call_kind"], e["payload"]["crew"], e["payload"]["reviewer"])
        for e in transcript.backend_calls()
    ]
    expected = []
    for i in range(1, 4):
        expected.append(("assess_self", i, i))
        for j in range(1, 4):
            if j != i:
                expected.append(("assess_peer", i, j))
        expected.append(("assess_supervisory", i, 0))
    assert observed == expected


def test_round_supervisory_count_n4():
    gateway, transcript = make_gateway()
    run_round(gateway, 0, _instructions(4), _responses(4), RunConfig())
    assert len(transcript.backend_calls("assess_supervisory")) == 4


def test_round_no_360_makes_no_calls():
    gateway, transcript = make_gateway()
    sets = run_round(
        gateway, 0, _instructions(3), _responses(3), RunConfig(ablations=frozenset({"no_360"}))
    )
    assert transcript.call_count() == 0
    assert all(s.is_empty() for s in sets)


def test_round_no_self_n5_counts():
    gateway, transcript = make_gateway()
    sets = run_round(
        gateway, 0, _instructions(5), _responses(5), RunConfig(ablations=frozenset({"no_self"}))
    )
    assert transcript.call_count() == 25  # 20 peer + 5 supervisory
    assert all(s.self_review is None for s in sets)


def test_round_no_peer_n5_set_shape():
    gateway, _ = make_gateway()
    sets = run_round(
        gateway, 0, _instructions(5), _responses(5), RunConfig(ablations=frozenset({"no_peer"}))
    )
    for s in sets:
        assert s.peer_reviews == ()
        assert s.self_review is not None and s.supervisory_review is not None


def _review(kind: str, reviewer: int, reviewee: int, turn: int = 0) -> Review:
    return Review(kind=kind, reviewer=reviewer, reviewee=reviewee, turn=turn, text="t")


def test_assemble_orders_peers_by_reviewer():
    reviews = [
        _review("supervisory", 0, 1),
        _review("peer", 3, 1),
        _review("self", 1, 1),
        _review("peer", 2, 1),
    ]
    bundle = assemble_review_set(1, 0, reviews, n_crews=3)
    assert [r.reviewer for r in bundle.peer_reviews] == [2, 3]
    ordered = bundle.in_canonical_order()
    assert [r.kind for r in ordered] == ["self", "peer", "peer", "supervisory"]


def test_assemble_rejects_duplicate_self():
    reviews = [
        _review("self", 1, 1),
        _review("self", 1, 1),
        _review("peer", 2, 1),
        _review("peer", 3, 1),
        _review("supervisory", 0, 1),
    ]
    with pytest.raises(CardinalityError) as err:
        assemble_review_set(1, 0, reviews, n_crews=3)
    assert err.value.kind == "self"


def test_assemble_rejects_missing_peer():
    reviews = [_review("self", 1, 1), _review("peer", 2, 1), _review("supervisory", 0, 1)]
    with pytest.raises(CardinalityError) as err:
        assemble_review_set(1, 0, reviews, n_crews=4)
    assert err.value.kind == "peer"


def test_assemble_rejects_wrong_target():
    reviews = [_review("self", 2, 2)]
    with pytest.raises(CardinalityError):
        assemble_review_set(1, 0, reviews, n_crews=2, peer_on=False, supervisory_on=False)
