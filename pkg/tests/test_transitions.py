import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amralign.evaluation import smatch
from amralign.graph import AmrEdge, Sentence, parse_penman
from amralign.transitions import (
    COPY,
    END,
    SHIFT,
    Action,
    MachineState,
    TransitionError,
    apply,
    format_actions,
    oracle,
    parse_actions,
    run_machine,
    valid_actions,
)

from conftest import random_alignment, random_graph, random_sentence

W = Sentence("s", ("the", "boy", "runs", "."))
RUN = parse_penman("(r / run-01 :ARG0 (b / boy))")


def test_oracle_example():
    # boy at token 2, run-01 at token 3: the boy is copied, run-01 generated, then the arc
    acts = oracle({"b": 2, "r": 3}, W, RUN)
    assert format_actions(acts) == "SHIFT COPY SHIFT NODE(run-01) RA(ARG0,2) END"
    g = run_machine(W, acts)
    assert smatch(g, RUN)[2] == 1.0


def test_oracle_same_token():
    acts = oracle({"b": 1, "r": 1}, W, RUN)
    # DFS order puts run-01 first; the arc is emitted once boy exists
    assert format_actions(acts) == "NODE(run-01) NODE(boy) LA(ARG0,1) END"


def test_oracle_rejects_partial_or_out_of_range():
    with pytest.raises(ValueError):
        oracle({"b": 2}, W, RUN)
    with pytest.raises(ValueError):
        oracle({"b": 2, "r": 9}, W, RUN)


def test_action_text_round_trip():
    acts = [SHIFT, COPY, Action("NODE", "run-01"), Action("LA", "ARG0", 2), Action("RA", "op1", 1), END]
    assert parse_actions(format_actions(acts)) == acts
    with pytest.raises(ValueError):
        Action.parse("JUMP")


def test_masks_initial_state():
    va = valid_actions(MachineState(), W)
    assert va.shift and va.node and not va.end and not va.any_arc


def test_shift_disabled_at_last_token():
    state = MachineState()
    for _ in range(3):
        state = apply(state, SHIFT, W)
    assert not valid_actions(state, W).shift
    with pytest.raises(TransitionError):
        apply(state, SHIFT, W)


def test_arc_needs_node_phase():
    s = apply(MachineState(), COPY, W)
    s = apply(s, COPY, W)
    assert valid_actions(s, W).arc_targets == (1,)
    s = apply(s, SHIFT, W)
    assert not valid_actions(s, W).any_arc
    with pytest.raises(TransitionError):
        apply(s, Action("LA", "x", 1), W)


def test_arc_used_once_per_node():
    s = apply(MachineState(), COPY, W)
    s = apply(s, COPY, W)
    s = apply(s, Action("RA", "x", 1), W)
    va = valid_actions(s, W)
    assert not va.allows(Action("RA", "x", 1))
    assert va.allows(Action("LA", "x", 1))
    assert va.allows(Action("RA", "y", 1))


def test_node_cap():
    s = apply(MachineState(), COPY, W, node_cap=1)
    assert not valid_actions(s, W, node_cap=1).node
    s = apply(s, SHIFT, W, node_cap=1)
    assert valid_actions(s, W, node_cap=1).node


def test_run_machine_errors_report_step():
    with pytest.raises(TransitionError) as info:
        run_machine(W, [COPY, Action("LA", "x", 1), END])
    assert info.value.step == 2
    with pytest.raises(TransitionError):
        run_machine(W, [COPY])
    with pytest.raises(TransitionError):
        run_machine(W, [END])
    with pytest.raises(TransitionError) as info:
        run_machine(W, [COPY, END, SHIFT])
    assert info.value.step == 3


def test_la_ra_direction():
    g = run_machine(W, [COPY, COPY, Action("LA", "a", 1), Action("RA", "b", 1), END])
    assert g.edges == (AmrEdge("n1", "n2", "a"), AmrEdge("n2", "n1", "b"))


def test_reentrant_graph_round_trip():
    g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))")
    w = Sentence("s", ("the", "boy", "wants", "to", "go"))
    for l in ({"w": 3, "b": 2, "g": 5}, {"w": 1, "b": 1, "g": 1}, {"w": 5, "b": 1, "g": 3}):
        assert smatch(run_machine(w, oracle(l, w, g)), g)[2] == 1.0


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6))
def test_round_trip_property(seed):
    rng = random.Random(seed)
    g = random_graph(rng)
    w = random_sentence(rng)
    l = random_alignment(rng, w, g)
    acts = oracle(l, w, g)
    built = run_machine(w, acts)
    assert smatch(built, g)[2] == 1.0
    # every action the oracle emits is admissible in its state
    state = MachineState()
    for a in acts:
        assert valid_actions(state, w).allows(a)
        state = apply(state, a, w)
