"""Shared fixtures: small graphs with scripted backends driving known runs."""

from __future__ import annotations

import pytest

from kgbeam import KnowledgeGraph, ScriptedBackend
from kgbeam.scoring import PruneKind

# A capital-city graph whose first exploration step splits 0.5/0.4/0.1.
CANBERRA_LINES = [
    "m.0canb\tcapital of\tm.0au\tCanberra\tAustralia",
    "m.0canb\tcountry\tm.0au\tCanberra\tAustralia",
    "m.0canb\tterritory\tm.0act\tCanberra\tAustralian Capital Territory",
    "m.0au\tprime minister\tm.0alb\tAustralia\tAnthony Albanese",
    "m.0alb\tmember of political party\tm.0alp\tAnthony Albanese\tAustralian Labor Party",
]

CANBERRA_QUESTION = "Which party governs the country whose capital city is Canberra?"

CANBERRA_RELATION_SCORES = [
    ("capital of", 0.5),
    ("country", 0.4),
    ("territory", 0.1),
    ("prime minister", 0.8),
    ("member of political party", 0.9),
]

# A two-hop mascot->stadium graph holding a stale fact worth correcting.
PHILLIE_LINES = [
    "m.0phan\tteam mascot of\tm.0phil\tPhillie Phanatic\tPhiladelphia Phillies",
    "m.0phil\tarena stadium\tm.0bhf\tPhiladelphia Phillies\tBright House Field",
]

PHILLIE_QUESTION = "Which stadium is home to the team whose mascot is the Phillie Phanatic?"


@pytest.fixture
def canberra_kg() -> KnowledgeGraph:
    return KnowledgeGraph.from_lines(CANBERRA_LINES)


def make_canberra_backend(sufficient_at: int | None = 3) -> ScriptedBackend:
    backend = ScriptedBackend()
    backend.script_topics(CANBERRA_QUESTION, [("Canberra", 1.0)])
    backend.script_scores(
        CANBERRA_QUESTION, CANBERRA_RELATION_SCORES, kind=PruneKind.RELATION
    )
    if sufficient_at is not None:
        backend.script_verdict(CANBERRA_QUESTION, {sufficient_at: True})
    backend.script_answer(CANBERRA_QUESTION, "The answer is Australian Labor Party.")
    return backend


@pytest.fixture
def canberra_backend() -> ScriptedBackend:
    return make_canberra_backend()


@pytest.fixture
def phillie_kg() -> KnowledgeGraph:
    return KnowledgeGraph.from_lines(PHILLIE_LINES)


def make_phillie_backend() -> ScriptedBackend:
    backend = ScriptedBackend(answer_policy="tail_echo")
    backend.script_topics(PHILLIE_QUESTION, [("Phillie Phanatic", 1.0)])
    backend.script_scores(
        PHILLIE_QUESTION,
        [("team mascot of", 0.4), ("arena stadium", 0.9)],
        kind=PruneKind.RELATION,
    )
    backend.script_verdict(PHILLIE_QUESTION, {2: True})
    return backend


@pytest.fixture
def phillie_backend() -> ScriptedBackend:
    return make_phillie_backend()
