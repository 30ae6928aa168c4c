"""One full assessment round per turn: self, peer, and supervisory
reviews of every crew response, assembled into per-crew review sets."""

from __future__ import annotations

from . import prompts
from .backend import Gateway
from .domain import Review, ReviewSet, RunConfig, SubTaskInstruction, TurnResponse
from .errors import CardinalityError, InvalidPairError


def self_assess(
    gateway: Gateway, crew_index: int, response: TurnResponse, instruction: SubTaskInstruction
) -> Review:
    """Crew agent reflects on its own response against its instruction."""
    prompt = prompts.render(
        "assess_self",
        {"instruction": instruction.instruction_text, "response": response.text},
    )
    text = gateway.call(
        "assess_self", prompt, crew=crew_index, reviewer=crew_index, turn=response.turn
    )
    return Review(
        kind="self", reviewer=crew_index, reviewee=crew_index, turn=response.turn, text=text
    )


def peer_assess(
    gateway: Gateway,
    reviewer_index: int,
    reviewer_response: TurnResponse,
    reviewee_response: TurnResponse,
    reviewee_instruction: SubTaskInstruction,
) -> Review:
    """One crew agent reviews another's response, seeing its own response,
    the reviewee's response, and the reviewee's instruction."""
    reviewee_index = reviewee_response.crew_index
    if reviewer_index == reviewee_index:
        raise InvalidPairError(f"agent {reviewer_index} cannot peer-review itself")
    prompt = prompts.render(
        "assess_peer",
        {
            "own_response": reviewer_response.text,
            "peer_instruction": reviewee_instruction.instruction_text,
            "peer_response": reviewee_response.text,
        },
    )
    text = gateway.call(
        "assess_peer",
        prompt,
        crew=reviewee_index,
        reviewer=reviewer_index,
        turn=reviewee_response.turn,
    )
    return Review(
        kind="peer",
        reviewer=reviewer_index,
        reviewee=reviewee_index,
        turn=reviewee_response.turn,
        text=text,
    )


def supervisory_assess(
    gateway: Gateway, response: TurnResponse, instruction: SubTaskInstruction
) -> Review:
    """The leader reviews one crew response against its instruction."""
    prompt = prompts.render(
        "assess_supervisory",
        {"instruction": instruction.instruction_text, "response": response.text},
    )
    text = gateway.call(
        "assess_supervisory",
        prompt,
        crew=response.crew_index,
        reviewer=0,
        turn=response.turn,
    )
    return Review(
        kind="supervisory",
        reviewer=0,
        reviewee=response.crew_index,
        turn=response.turn,
        text=text,
    )


def assemble_review_set(
    crew_index: int,
    turn: int,
    reviews: list[Review],
    *,
    n_crews: int,
    self_on: bool = True,
    peer_on: bool = True,
    supervisory_on: bool = True,
) -> ReviewSet:
    """Bundle the reviews targeting one crew agent at one turn.

    Enforces the exact cardinality of each enabled kind; peers come out
    ordered by reviewer index.
    """
    for review in reviews:
        if review.reviewee != crew_index or review.turn != turn:
            raise CardinalityError(
                review.kind, f"review targets ({review.reviewee}, t{review.turn}), "
                f"expected ({crew_index}, t{turn})"
            )
    selves = [r for r in reviews if r.kind == "self"]
    peers = sorted((r for r in reviews if r.kind == "peer"), key=lambda r: r.reviewer)
    sups = [r for r in reviews if r.kind == "supervisory"]

    def check(kind: str, got: int, want: int) -> None:
        if got != want:
            raise CardinalityError(kind, f"expected {want} review(s), got {got}")

    check("self", len(selves), 1 if self_on else 0)
    check("peer", len(peers), n_crews - 1 if peer_on else 0)
    check("supervisory", len(sups), 1 if supervisory_on else 0)
    return ReviewSet(
        crew_index=crew_index,
        turn=turn,
        self_review=selves[0] if selves else None,
        peer_reviews=tuple(peers),
        supervisory_review=sups[0] if sups else None,
    )


def run_round(
    gateway: Gateway,
    turn: int,
    instructions: list[SubTaskInstruction],
    responses: dict[int, TurnResponse],
    config: RunConfig,
) -> list[ReviewSet]:
    """Run one assessment round over the given turn's responses.

    Canonical call order: for each crew i ascending - self(i), peers of i
    by reviewer ascending, supervisory(i). With everything enabled that
    is N self + N(N-1) peer + N supervisory calls.
    """
    by_index = {inst.crew_index: inst for inst in instructions}
    indices = sorted(by_index)
    sets: list[ReviewSet] = []
    for i in indices:
        if not config.assessment_on:
            sets.append(
                ReviewSet(
                    crew_index=i,
                    turn=turn,
                    self_review=None,
                    peer_reviews=(),
                    supervisory_review=None,
                )
            )
            continue
        reviews: list[Review] = []
        if config.self_on:
            reviews.append(self_assess(gateway, i, responses[i], by_index[i]))
        if config.peer_on:
            for j in indices:
                if j == i:
                    continue
                reviews.append(
                    peer_assess(gateway, j, responses[j], responses[i], by_index[i])
                )
        if config.supervisory_on:
            reviews.append(supervisory_assess(gateway, responses[i], by_index[i]))
        sets.append(
            assemble_review_set(
                i,
                turn,
                reviews,
                n_crews=len(indices),
                self_on=config.self_on,
                peer_on=config.peer_on,
                supervisory_on=config.supervisory_on,
            )
        )
    return sets
