"""Shared helpers: random graph/sentence generators and the acceptance summary."""

from __future__ import annotations

import random

import pytest

from amralign.graph import AmrEdge, AmrGraph, AmrNode, Sentence

CONCEPTS = ["dog", "cat", "run-01", "see-01", "big", "and", "want-01"]
WORDS = ["dog", "cat", "the", "ran", "sees", "big", "and", "wants", "a", "."]
ROLES = ["ARG0", "ARG1", "ARG2", "mod", "op1", "op2"]


def random_graph(rng: random.Random, max_nodes: int = 6, reentrancy: float = 0.3, labels=CONCEPTS) -> AmrGraph:
    """Connected graph rooted at the first node; the root has no incoming edge.

    Every non-root node gets one tree edge from an earlier node; extra
    re-entrant edges (also from earlier nodes, no duplicate roles per
    source) are added with probability ``reentrancy``.
    """
    n = rng.randint(1, max_nodes)
    ids = [f"v{k}" for k in range(n)]
    nodes = tuple(AmrNode(i, rng.choice(labels)) for i in ids)
    edges = []
    used = {i: set() for i in ids}

    def add(src, tgt):
        free = [r for r in ROLES if r not in used[src]]
        if not free:
            return
        role = rng.choice(free)
        used[src].add(role)
        edges.append(AmrEdge(src, tgt, role))

    for k in range(1, n):
        add(ids[rng.randrange(k)], ids[k])
    for k in range(2, n):
        if rng.random() < reentrancy:
            src = ids[rng.randrange(1, k)] if k > 1 else ids[0]
            if not any(e.source == src and e.target == ids[k] for e in edges):
                add(src, ids[k])
    return AmrGraph(nodes, tuple(edges), ids[0])


def random_sentence(rng: random.Random, min_len: int = 1, max_len: int = 8, words=WORDS) -> Sentence:
    n = rng.randint(min_len, max_len)
    return Sentence("rand", tuple(rng.choice(words) for _ in range(n)))


def random_alignment(rng: random.Random, w: Sentence, g: AmrGraph) -> dict[str, int]:
    return {node.node_id: rng.randint(1, len(w)) for node in g.nodes}


# -- acceptance summary -----------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Store ``(passed, detail)`` for a numbered criterion and print it."""

    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
