"""AMR graph data model, Penman I/O, tokenization and tree linearization."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

PUNCT = set('.,!?;:"\'()[]')


class PenmanError(ValueError):
    pass


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Sentence:
    """A tokenized sentence. Token indices are 1-based in every public API."""

    id: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("sentence has no tokens")
        for tok in self.tokens:
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"invalid token {tok!r}")

    def __len__(self):
        return len(self.tokens)

    def word(self, i: int) -> str:
        if not 1 <= i <= len(self.tokens):
            raise IndexError(f"token index {i} out of range 1..{len(self.tokens)}")
        return self.tokens[i - 1]


@dataclass(frozen=True)
class AmrNode:
    node_id: str
    label: str


@dataclass(frozen=True)
class AmrEdge:
    source: str
    target: str
    label: str


@dataclass(frozen=True)
class AmrGraph:
    nodes: tuple[AmrNode, ...]
    edges: tuple[AmrEdge, ...]
    root: str

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate node id")
        known = set(ids)
        if self.nodes and self.root not in known:
            raise GraphError(f"root {self.root!r} is not a node")
        for e in self.edges:
            if e.source not in known or e.target not in known:
                raise GraphError(f"edge {e} references an unknown node")
            if e.source == e.target:
                raise GraphError(f"self-loop on {e.source!r}")
        for n in self.nodes:
            if not n.label:
                raise GraphError(f"node {n.node_id!r} has an empty label")

    def __len__(self):
        return len(self.nodes)

    def label_of(self, node_id: str) -> str:
        for n in self.nodes:
            if n.node_id == node_id:
                return n.label
        raise KeyError(node_id)

    @property
    def labels(self) -> dict[str, str]:
        return {n.node_id: n.label for n in self.nodes}

    def children(self, node_id: str) -> list[AmrEdge]:
        return [e for e in self.edges if e.source == node_id]

    def reachable(self) -> set[str]:
        """Node ids reachable from the root along directed edges."""
        if not self.nodes:
            return set()
        out: dict[str, list[str]] = {}
        for e in self.edges:
            out.setdefault(e.source, []).append(e.target)
        seen = {self.root}
        stack = [self.root]
        while stack:
            for nxt in out.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def is_connected(self) -> bool:
        return len(self.reachable()) == len(self.nodes)

    def is_tree(self) -> bool:
        indeg: dict[str, int] = {}
        for e in self.edges:
            indeg[e.target] = indeg.get(e.target, 0) + 1
        if indeg.get(self.root, 0) != 0:
            return False
        if any(indeg.get(n.node_id, 0) != 1 for n in self.nodes if n.node_id != self.root):
            return False
        return self.is_connected()


@dataclass(frozen=True)
class LinearizedTree:
    """Depth-first token stream of a tree.

    ``node_positions`` holds ``(token_index, node_id)`` pairs with 1-based
    token indices, in DFS order.
    """

    tokens: tuple[str, ...]
    node_positions: tuple[tuple[int, str], ...]

    @property
    def node_ids(self) -> list[str]:
        return [nid for _, nid in self.node_positions]

    def __str__(self):
        return " ".join(self.tokens)


@dataclass
class CorpusEntry:
    sentence: Sentence
    graph: AmrGraph
    gold_alignment: dict[str, int] | None = None
    # node_id -> (start, end) 1-based, end exclusive
    gold_spans: dict[str, tuple[int, int]] | None = field(default=None)


# --- Penman ----------------------------------------------------------------

_PENMAN_TOKEN = re.compile(r'\s*(\(|\)|/|:[^\s()/:]+|"[^"]*"|[^\s()/:"]+)')


def _lex_penman(text: str) -> list[str]:
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _PENMAN_TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise PenmanError(f"unexpected character {text[pos]!r} at offset {pos}")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens


def parse_penman(text: str) -> AmrGraph:
    """Parse a Penman string such as ``(r / run-01 :ARG0 (b / boy))``.

    Re-entrancies are bare variable references. ``:REL-of`` labels are
    stored verbatim with the edge pointing from the enclosing node.
    """
    toks = _lex_penman(text)
    if not toks or toks[0] != "(":
        raise PenmanError("graph must start with '('")
    if toks.count("(") != toks.count(")"):
        raise PenmanError("unbalanced parentheses")

    nodes: list[AmrNode] = []
    defined: set[str] = set()
    edges: list[tuple[str, str, str]] = []
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(toks) or toks[pos] != tok:
            got = toks[pos] if pos < len(toks) else "end of input"
            raise PenmanError(f"expected {tok!r}, got {got!r}")
        pos += 1

    def parse_node() -> str:
        nonlocal pos
        expect("(")
        if pos >= len(toks):
            raise PenmanError("truncated graph")
        var = toks[pos]
        if var in "()/" or var.startswith(":"):
            raise PenmanError(f"expected variable, got {var!r}")
        pos += 1
        if var in defined:
            raise PenmanError(f"duplicate variable definition {var!r}")
        defined.add(var)
        expect("/")
        if pos >= len(toks) or toks[pos] in "()/" or toks[pos].startswith(":"):
            raise PenmanError(f"missing label for {var!r}")
        nodes.append(AmrNode(var, toks[pos].strip('"')))
        pos += 1
        while pos < len(toks) and toks[pos].startswith(":"):
            rel = toks[pos][1:]
            pos += 1
            if pos >= len(toks):
                raise PenmanError(f"relation :{rel} has no target")
            if toks[pos] == "(":
                # child edges are recorded before the child's own edges
                slot = len(edges)
                edges.append((var, "", rel))
                child = parse_node()
                edges[slot] = (var, child, rel)
            elif toks[pos] in ")/":
                raise PenmanError(f"relation :{rel} has no target")
            else:
                edges.append((var, toks[pos], rel))
                pos += 1
        expect(")")
        return var

    root = parse_node()
    if pos != len(toks):
        raise PenmanError(f"trailing tokens after graph: {' '.join(toks[pos:])}")
    for src, tgt, rel in edges:
        if tgt not in defined:
            raise PenmanError(f"reference to undefined variable {tgt!r}")
    try:
        return AmrGraph(tuple(nodes), tuple(AmrEdge(s, t, r) for s, t, r in edges), root)
    except GraphError as exc:
        raise PenmanError(str(exc)) from exc


def emit_penman(g: AmrGraph) -> str:
    """Serialize ``g``; second visits of a re-entrant node emit the bare variable."""
    if not g.nodes:
        raise GraphError("empty graph")
    if not g.is_connected():
        raise GraphError("graph is not connected from its root")
    labels = g.labels
    out_edges: dict[str, list[AmrEdge]] = {}
    for e in g.edges:
        out_edges.setdefault(e.source, []).append(e)
    visited: set[str] = set()
    parts: list[str] = []

    def emit(var: str):
        visited.add(var)
        parts.append(f"({var} / {labels[var]}")
        for e in out_edges.get(var, ()):
            parts.append(f" :{e.label} ")
            if e.target in visited:
                parts.append(e.target)
            else:
                emit(e.target)
        parts.append(")")

    emit(g.root)
    return "".join(parts)


# --- tokenization ----------------------------------------------------------

def tokenize(text: str, sent_id: str = "") -> Sentence:
    """Split on whitespace and detach leading/trailing punctuation characters."""
    if not text or not text.strip():
        raise ValueError("cannot tokenize an empty string")
    tokens: list[str] = []
    for chunk in text.split():
        lead = []
        while chunk and chunk[0] in PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return Sentence(sent_id, tuple(tokens))


# --- trees -----------------------------------------------------------------

def graph_to_tree(g: AmrGraph) -> AmrGraph:
    """Keep only the first incoming edge of every node (the root keeps none)."""
    kept: list[AmrEdge] = []
    has_parent = {g.root}
    for e in g.edges:
        if e.target in has_parent:
            continue
        has_parent.add(e.target)
        kept.append(e)
    tree = AmrGraph(g.nodes, tuple(kept), g.root)
    unreachable = {n.node_id for n in g.nodes} - tree.reachable()
    if unreachable:
        raise GraphError(f"nodes unreachable from root after pruning: {sorted(unreachable)}")
    return tree


def linearize(tree: AmrGraph) -> LinearizedTree:
    """Depth-first token stream ``( label :rel ( child ... ) )``."""
    if not tree.is_tree():
        raise GraphError("linearize requires a tree")
    labels = tree.labels
    out_edges: dict[str, list[AmrEdge]] = {}
    for e in tree.edges:
        out_edges.setdefault(e.source, []).append(e)
    tokens: list[str] = []
    positions: list[tuple[int, str]] = []

    # explicit stack: deep graphs must not hit the recursion limit
    stack: list[tuple[str, str]] = [("node", tree.root)]
    while stack:
        kind, value = stack.pop()
        if kind == "node":
            tokens.append("(")
            tokens.append(labels[value])
            positions.append((len(tokens), value))
            stack.append(("close", ")"))
            for e in reversed(out_edges.get(value, ())):
                stack.append(("node", e.target))
                stack.append(("rel", ":" + e.label))
        else:
            tokens.append(value)
    return LinearizedTree(tuple(tokens), tuple(positions))


def dfs_node_order(g: AmrGraph) -> list[str]:
    """Node ids of ``g`` in the DFS order of its derived tree."""
    return linearize(graph_to_tree(g)).node_ids
