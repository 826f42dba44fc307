#!/usr/bin/env python3
"""Record service responses for the UI test suite.

Drives the real HTTP service (in-process, via the test client) through the
exact scenario the frontend tests replay — ask, fetch trace, correct twice,
provoke a rejection, plus a depth-budget fallback run — and writes every
response verbatim into tests/fixtures/. Re-run after changing the service
or trace schema:

    python3 scripts/record-fixtures.py
"""

import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from kgbeam import KnowledgeGraph, SearchConfig
from kgbeam.scoring import ScriptedBackend
from kgbeam.service import RunStore, ServiceState, build_app

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

GRAPH_LINES = [
    "m.0canb\tcapital of\tm.0au\tCanberra\tAustralia",
    "m.0canb\tcountry\tm.0au\tCanberra\tAustralia",
    "m.0canb\tterritory\tm.0act\tCanberra\tAustralian Capital Territory",
    "m.0au\tprime minister\tm.0alb\tAustralia\tAnthony Albanese",
    "m.0alb\tmember of political party\tm.0alp\tAnthony Albanese\tAustralian Labor Party",
]

QUESTION = (
    "Which political party does the prime minister of the country whose "
    "capital is Canberra belong to?"
)
FALLBACK_QUESTION = (
    "What is the national anthem of the country whose capital is Canberra?"
)

RELATION_SCORES = [
    ("capital of", 0.5),
    ("country", 0.4),
    ("territory", 0.1),
    ("prime minister", 0.8),
    ("member of political party", 0.9),
]


def build_backend() -> ScriptedBackend:
    backend = ScriptedBackend(answer_policy="tail_echo")
    for question in (QUESTION, FALLBACK_QUESTION):
        backend.script_topics(question, [("Canberra", 1.0)])
        backend.script_scores(question, RELATION_SCORES)
    # the main question is answerable after one hop; the fallback one never is
    backend.script_verdict(QUESTION, {1: True})
    return backend


def save(name: str, payload: object) -> None:
    path = FIXTURES / name
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", "utf-8")
    print(f"wrote {path.relative_to(FIXTURES.parent.parent)}")


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    kg = KnowledgeGraph.from_lines(GRAPH_LINES)
    backend = build_backend()
    with tempfile.TemporaryDirectory() as tmp:
        state = ServiceState(
            kg=kg,
            scorer=backend,
            reasoner=backend,
            config=SearchConfig(width=3, max_depth=3),
            store=RunStore(tmp),
        )
        client = TestClient(build_app(state))

        stats = client.get("/kg/stats")
        assert stats.status_code == 200, stats.text
        save("kg-stats.json", stats.json())

        ask = client.post("/ask", json={"question": QUESTION})
        assert ask.status_code == 200, ask.text
        run_a = ask.json()["run_id"]
        save("ask.json", ask.json())
        save("run-before.json", client.get(f"/runs/{run_a}").json())
        trace_before = client.get(f"/runs/{run_a}/trace").json()
        assert len(trace_before["depths"]) == 1
        assert [p["score"] for p in trace_before["depths"][0]["beam"]] == [0.5, 0.4, 0.1]
        save("trace-before.json", trace_before)

        first = client.post(
            f"/runs/{run_a}/correct",
            json={
                "action": "replace_object",
                "subject": "m.0canb",
                "relation": "capital of",
                "object": "m.0au",
                "new_object": "m.0cau",
                "new_object_label": "Commonwealth of Australia",
                "note": "capital points at the informal country name",
            },
        )
        assert first.status_code == 200, first.text
        run_b = first.json()["run_id"]
        assert first.json()["answer_before"] == "Australia"
        assert first.json()["answer_after"] == "Commonwealth of Australia"
        save("correction-1.json", first.json())
        save("run-after.json", client.get(f"/runs/{run_b}").json())
        save("trace-after.json", client.get(f"/runs/{run_b}/trace").json())

        second = client.post(
            f"/runs/{run_b}/correct",
            json={
                "action": "replace_object",
                "subject": "m.0canb",
                "relation": "capital of",
                "object": "m.0cau",
                "new_object": "m.0syd",
                "new_object_label": "Sydney",
                "note": "operator testing a deliberate mistake",
            },
        )
        assert second.status_code == 200, second.text
        run_c = second.json()["run_id"]
        save("correction-2.json", second.json())
        save("run-final.json", client.get(f"/runs/{run_c}").json())
        save("trace-final.json", client.get(f"/runs/{run_c}/trace").json())

        # correcting the original triple again now fails: it was replaced above
        stale = client.post(
            f"/runs/{run_a}/correct",
            json={
                "action": "delete",
                "subject": "m.0canb",
                "relation": "capital of",
                "object": "m.0au",
            },
        )
        assert stale.status_code == 400, stale.text
        save("rejection.json", {"status": 400, "body": stale.json()})

        fallback = client.post(
            "/ask", json={"question": FALLBACK_QUESTION, "max_depth": 1}
        )
        assert fallback.status_code == 200, fallback.text
        run_d = fallback.json()["run_id"]
        assert fallback.json()["fallback"] is True
        save("ask-fallback.json", fallback.json())
        save("run-fallback.json", client.get(f"/runs/{run_d}").json())
        save("trace-fallback.json", client.get(f"/runs/{run_d}/trace").json())

    return 0


if __name__ == "__main__":
    sys.exit(main())
