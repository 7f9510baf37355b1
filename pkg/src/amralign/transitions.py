"""Cursor-based transition system: state machine, validity masks and oracle.

Actions::

    SHIFT         move the cursor one token right
    NODE(y)       generate a node labelled y
    COPY          generate a node labelled with the word under the cursor
    LA(y,n)       edge y from the node generated by action n to the newest node
    RA(y,n)       edge y from the newest node to the node generated by action n
    END           stop

Arc actions are only admissible directly after a node action (or another
arc), and each ``(direction, target, label)`` arc can be emitted once per
node. ``n`` is a 1-based index into the action sequence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .graph import AmrEdge, AmrGraph, AmrNode, Sentence, dfs_node_order

NODE_KINDS = ("NODE", "COPY")
ARC_KINDS = ("LA", "RA")


class TransitionError(ValueError):
    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class Action:
    kind: str
    label: str | None = None
    target: int | None = None

    def __post_init__(self):
        if self.kind not in ("SHIFT", "NODE", "COPY", "LA", "RA", "END"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if (self.kind in ("NODE", "LA", "RA")) != (self.label is not None):
            raise ValueError(f"{self.kind} label mismatch")
        if (self.kind in ARC_KINDS) != (self.target is not None):
            raise ValueError(f"{self.kind} target mismatch")

    @property
    def base(self) -> str:
        """Action string without the pointer, e.g. ``LA(ARG0)``."""
        if self.kind in ("NODE", "LA", "RA"):
            return f"{self.kind}({self.label})"
        return self.kind

    def __str__(self):
        if self.kind in ARC_KINDS:
            return f"{self.kind}({self.label},{self.target})"
        return self.base

    @classmethod
    def parse(cls, text: str) -> "Action":
        if text in ("SHIFT", "COPY", "END"):
            return cls(text)
        m = re.fullmatch(r"(LA|RA)\((.+),(\d+)\)", text)
        if m:
            return cls(m.group(1), m.group(2), int(m.group(3)))
        m = re.fullmatch(r"NODE\((.+)\)", text)
        if m:
            return cls("NODE", m.group(1))
        raise ValueError(f"cannot parse action {text!r}")


SHIFT = Action("SHIFT")
COPY = Action("COPY")
END = Action("END")


def format_actions(actions) -> str:
    return " ".join(str(a) for a in actions)


def parse_actions(line: str) -> list[Action]:
    return [Action.parse(t) for t in line.split()]


@dataclass(frozen=True)
class MachineState:
    cursor: int = 1
    history: tuple[Action, ...] = ()
    generated: tuple[tuple[int, str], ...] = ()
    nodes: tuple[AmrNode, ...] = ()
    edges: tuple[AmrEdge, ...] = ()
    nodes_at_cursor: int = 0
    done: bool = False
    root: str | None = None

    @property
    def partial_graph(self) -> AmrGraph:
        root = self.root if self.root is not None else _default_root(self.nodes, self.edges)
        return AmrGraph(self.nodes, self.edges, root or "")

    @property
    def in_arc_phase(self) -> bool:
        return bool(self.history) and self.history[-1].kind in NODE_KINDS + ARC_KINDS


def _default_root(nodes, edges):
    if not nodes:
        return None
    has_parent = {e.target for e in edges}
    for n in nodes:
        if n.node_id not in has_parent:
            return n.node_id
    return nodes[0].node_id


@dataclass(frozen=True)
class ValidActions:
    """Admissible action shapes in one state (masks m and m2)."""

    shift: bool
    node: bool
    end: bool
    arc_targets: tuple[int, ...] = ()
    used_arcs: frozenset = field(default_factory=frozenset)

    def targets(self, kind: str, label: str) -> list[int]:
        return [n for n in self.arc_targets if (kind, n, label) not in self.used_arcs]

    def arc_allowed(self, kind: str, label: str) -> bool:
        return any((kind, n, label) not in self.used_arcs for n in self.arc_targets)

    @property
    def any_arc(self) -> bool:
        return bool(self.arc_targets)

    def allows(self, a: Action) -> bool:
        if a.kind == "SHIFT":
            return self.shift
        if a.kind in NODE_KINDS:
            return self.node
        if a.kind == "END":
            return self.end
        return a.target in self.targets(a.kind, a.label)


def valid_actions(state: MachineState, w: Sentence, node_cap: int | None = None) -> ValidActions:
    """Validity mask for ``state``.

    ``node_cap`` bounds the number of nodes generated at one cursor
    position (None = unbounded); the parser uses it to keep the action
    space finite.
    """
    if state.done:
        raise TransitionError("machine already finished")
    node_ok = node_cap is None or state.nodes_at_cursor < node_cap
    targets: tuple[int, ...] = ()
    used = frozenset()
    if state.in_arc_phase and len(state.generated) >= 2:
        newest = state.generated[-1][0]
        targets = tuple(idx for idx, _ in state.generated[:-1])
        used = frozenset(
            (a.kind, a.target, a.label) for a in state.history[newest:] if a.kind in ARC_KINDS
        )
    return ValidActions(
        shift=state.cursor < len(w),
        node=node_ok,
        end=bool(state.generated),
        arc_targets=targets,
        used_arcs=used,
    )


def apply(state: MachineState, a: Action, w: Sentence, node_cap: int | None = None) -> MachineState:
    """Return the successor state; raises TransitionError for inadmissible actions."""
    valid = valid_actions(state, w, node_cap)
    if not valid.allows(a):
        raise TransitionError(f"action {a} is not admissible")
    history = state.history + (a,)
    t = len(history)
    if a.kind == "SHIFT":
        return MachineState(state.cursor + 1, history, state.generated, state.nodes, state.edges, 0)
    if a.kind in NODE_KINDS:
        label = a.label if a.kind == "NODE" else w.word(state.cursor)
        nid = f"n{len(state.nodes) + 1}"
        return MachineState(
            state.cursor,
            history,
            state.generated + ((t, nid),),
            state.nodes + (AmrNode(nid, label),),
            state.edges,
            state.nodes_at_cursor + 1,
        )
    if a.kind in ARC_KINDS:
        newest = state.generated[-1][1]
        other = dict(state.generated)[a.target]
        edge = AmrEdge(newest, other, a.label) if a.kind == "RA" else AmrEdge(other, newest, a.label)
        return MachineState(
            state.cursor, history, state.generated, state.nodes, state.edges + (edge,), state.nodes_at_cursor
        )
    root = state.root or _default_root(state.nodes, state.edges)
    return MachineState(
        state.cursor, history, state.generated, state.nodes, state.edges, state.nodes_at_cursor, True, root
    )


def run_machine(w: Sentence, actions, node_cap: int | None = None, root_action: int | None = None) -> AmrGraph:
    """Fold ``apply`` over ``actions``; the sequence must end with END.

    ``root_action`` optionally names the action index whose node becomes
    the root (default: first node without an incoming edge).
    """
    state = MachineState()
    for step, a in enumerate(actions, start=1):
        if state.done:
            raise TransitionError("action after END", step)
        try:
            state = apply(state, a, w, node_cap)
        except TransitionError as exc:
            raise TransitionError(str(exc), step) from None
    if not state.done:
        raise TransitionError("action sequence exhausted without END", len(actions))
    g = state.partial_graph
    if root_action is not None:
        g = AmrGraph(g.nodes, g.edges, dict(state.generated)[root_action])
    return g


def oracle(alignment: dict[str, int], w: Sentence, g: AmrGraph) -> list[Action]:
    """Action sequence rebuilding ``g`` with nodes placed at their aligned tokens."""
    missing = [n.node_id for n in g.nodes if n.node_id not in alignment]
    if missing:
        raise ValueError(f"alignment is not total; missing {missing}")
    for nid, tok in alignment.items():
        if not 1 <= tok <= len(w):
            raise ValueError(f"node {nid} aligned to token {tok} outside 1..{len(w)}")
    order = dfs_node_order(g)
    labels = g.labels
    at: dict[int, list[str]] = {}
    for nid in order:
        at.setdefault(alignment[nid], []).append(nid)
    last = max(at)
    actions: list[Action] = []
    index: dict[str, int] = {}
    for cursor in range(1, last + 1):
        if cursor > 1:
            actions.append(SHIFT)
        for nid in at.get(cursor, ()):
            if labels[nid].lower() == w.word(cursor).lower():
                actions.append(COPY)
            else:
                actions.append(Action("NODE", labels[nid]))
            index[nid] = len(actions)
            emitted = set()
            for e in g.edges:
                if e.source == nid and e.target in index and e.target != nid:
                    arc = Action("RA", e.label, index[e.target])
                elif e.target == nid and e.source in index and e.source != nid:
                    arc = Action("LA", e.label, index[e.source])
                else:
                    continue
                if arc not in emitted:
                    emitted.add(arc)
                    actions.append(arc)
    actions.append(END)
    return actions
