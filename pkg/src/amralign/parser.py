"""Small transition parser p(a | w).

Each step picks a base action (SHIFT, COPY, END, NODE(y), LA(y), RA(y))
from a masked softmax; arc actions additionally pick the earlier node
they attach to with a bilinear pointer over the decoder's history
states. Masks come from :func:`transitions.valid_actions`, so invalid
actions get probability exactly zero.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import AmrGraph, CorpusEntry, Sentence
from .layers import LSTM, BiLSTM, CharFeatureEmbedder
from .transitions import (
    ARC_KINDS,
    Action,
    MachineState,
    TransitionError,
    apply,
    oracle,
    valid_actions,
)

log = logging.getLogger(__name__)


@dataclass
class ParserConfig:
    hidden: int = 64
    emb_dim: int = 64
    action_dim: int = 32
    dropout: float = 0.1
    node_cap: int = 4
    seed: int = 0


@dataclass
class StepInfo:
    """What the model needs about one step of a known action sequence."""

    cursor: int
    base_mask: np.ndarray
    base_index: int
    arc_mask: np.ndarray | None = None
    arc_target: int | None = None


class TransitionParser:
    def __init__(self, config: ParserConfig, node_labels, edge_labels, embedder: CharFeatureEmbedder | None = None):
        self.config = config
        self.node_labels = sorted(set(node_labels))
        self.edge_labels = sorted(set(edge_labels))
        self.vocab = (
            ["SHIFT", "COPY", "END"]
            + [f"NODE({y})" for y in self.node_labels]
            + [f"LA({y})" for y in self.edge_labels]
            + [f"RA({y})" for y in self.edge_labels]
        )
        self.index = {b: k for k, b in enumerate(self.vocab)}
        self.bos = len(self.vocab)
        self.embedder = embedder or CharFeatureEmbedder(config.emb_dim)
        if self.embedder.dim != config.emb_dim:
            raise ValueError("embedder dimension does not match config.emb_dim")

        H, E, A, V = config.hidden, config.emb_dim, config.action_dim, len(self.vocab)
        rng = np.random.default_rng(config.seed)
        self.params = p = ad.ParamStore()
        self.encoder = BiLSTM(p, "enc", E, H, rng)
        self.action_emb = p.add("act.emb", ad.init_uniform(rng, (V + 1, A)))
        self.decoder = LSTM(p, "dec", A + 2 * H, H, rng)
        self.W_att = p.add("att.W", ad.init_uniform(rng, (H, 2 * H)))
        self.W_out = p.add("out.W", ad.init_uniform(rng, (H + 4 * H, V)))
        self.b_out = p.add("out.b", np.zeros(V))
        self.W_arc = p.add("arc.W", ad.init_uniform(rng, (H, H)))

    # -- vocabulary and masks ----------------------------------------------------

    def base_mask(self, state: MachineState, w: Sentence) -> tuple[np.ndarray, object]:
        va = valid_actions(state, w, self.config.node_cap)
        mask = np.zeros(len(self.vocab), dtype=bool)
        mask[0] = va.shift
        mask[1] = va.node
        mask[2] = va.end
        n_nodes = len(self.node_labels)
        if va.node:
            mask[3:3 + n_nodes] = True
        if va.any_arc:
            base = 3 + n_nodes
            for k, y in enumerate(self.edge_labels):
                mask[base + k] = va.arc_allowed("LA", y)
                mask[base + len(self.edge_labels) + k] = va.arc_allowed("RA", y)
        return mask, va

    def action_from_base(self, k: int, target: int | None = None) -> Action:
        b = self.vocab[k]
        if b in ("SHIFT", "COPY", "END"):
            return Action(b)
        kind, label = b[:-1].split("(", 1)
        return Action(kind, label, target)

    def trace(self, w: Sentence, actions) -> list[StepInfo]:
        """Run the machine over ``actions`` and record masks; rejects invalid sequences."""
        state = MachineState()
        steps = []
        n_actions = len(actions)
        for t, a in enumerate(actions, start=1):
            if state.done:
                raise TransitionError("action after END", t)
            mask, va = self.base_mask(state, w)
            k = self.index.get(a.base)
            if k is None:
                raise TransitionError(f"action {a.base} is outside the parser vocabulary", t)
            if not mask[k]:
                raise TransitionError(f"action {a} is not admissible", t)
            info = StepInfo(state.cursor, mask, k)
            if a.kind in ARC_KINDS:
                arc_mask = np.zeros(n_actions, dtype=bool)
                for n in va.targets(a.kind, a.label):
                    arc_mask[n - 1] = True
                if not arc_mask[a.target - 1]:
                    raise TransitionError(f"arc target {a.target} is not admissible", t)
                info.arc_mask = arc_mask
                info.arc_target = a.target
            try:
                state = apply(state, a, w, self.config.node_cap)
            except TransitionError as exc:
                raise TransitionError(str(exc), t) from None
            steps.append(info)
        if not state.done:
            raise TransitionError("action sequence does not end with END", n_actions)
        return steps

    # -- scoring --------------------------------------------------------------------

    def encode(self, w: Sentence, rng=None, train=False) -> Tensor:
        xs = Tensor(self.embedder.matrix(list(w.tokens)))
        xs = ad.dropout(xs, self.config.dropout, rng, train)
        return ad.dropout(self.encoder.run(xs), self.config.dropout, rng, train)

    def _features(self, h: Tensor, enc: Tensor, cursors: np.ndarray) -> Tensor:
        """Output-layer input [h; attention context; encoder state at cursor]."""
        att = ad.log_softmax(h @ self.W_att @ ad.transpose(enc), axis=1)
        ctx = ad.exp(att) @ enc
        return ad.concat([h, ctx, enc[cursors - 1]], axis=1)

    def score_steps(self, enc: Tensor, steps: list[StepInfo], rng=None, train=False) -> Tensor:
        """Summed log-probability of a traced sequence given the encoder states."""
        T = len(steps)
        prev = np.array([self.bos] + [s.base_index for s in steps[:-1]])
        cursors = np.array([s.cursor for s in steps])
        inputs = ad.concat([ad.embedding(self.action_emb, prev), enc[cursors - 1]], axis=1)
        h = self.decoder.run(inputs)
        h = ad.dropout(h, self.config.dropout, rng, train)
        logits = self._features(h, enc, cursors) @ self.W_out + self.b_out
        mask = np.stack([s.base_mask for s in steps])
        logp = ad.log_softmax(logits, axis=1, mask=mask)
        total = logp[(np.arange(T), np.array([s.base_index for s in steps]))].sum()

        arc_rows = [t for t, s in enumerate(steps) if s.arc_mask is not None]
        if arc_rows:
            # target n (1-based action index) is represented by h[n]: the state
            # that has consumed action n as its input
            rows = np.array(arc_rows)
            scores = h[rows] @ self.W_arc @ ad.transpose(h)
            arc_mask = np.stack([steps[t].arc_mask for t in arc_rows])
            arc_mask = np.concatenate([np.zeros((len(rows), 1), dtype=bool), arc_mask[:, :T - 1]], axis=1)
            arc_logp = ad.log_softmax(scores, axis=1, mask=arc_mask)
            targets = np.array([steps[t].arc_target for t in arc_rows])
            total = total + arc_logp[(np.arange(len(rows)), targets)].sum()
        return total

    def action_log_prob(self, w: Sentence, actions, rng=None, train=False) -> Tensor:
        return self.score_steps(self.encode(w, rng, train), self.trace(w, actions), rng, train)

    def joint_log_prob(self, w: Sentence, g: AmrGraph, alignment: dict[str, int], rng=None, train=False) -> Tensor:
        return self.action_log_prob(w, oracle(alignment, w, g), rng, train)

    # -- decoding ---------------------------------------------------------------------

    def greedy_decode(self, w: Sentence) -> tuple[list[Action], AmrGraph, bool]:
        """Step-wise argmax; returns ``(actions, graph, ok)``.

        ``ok`` is False when the step cap of 8*|w| is hit before END, in
        which case the graph is empty.
        """
        cap = 8 * len(w)
        with ad.no_dropout():
            enc = self.encode(w)
            state = MachineState()
            lstm_state = self.decoder.initial_state()
            prev = self.bos
            history: list[Tensor] = []
            actions: list[Action] = []
            while not state.done and len(actions) < cap:
                x = ad.concat([self.action_emb[prev:prev + 1], enc[state.cursor - 1:state.cursor]], axis=1)
                lstm_state = self.decoder.step(x @ self.decoder.Wx, lstm_state)
                h = lstm_state[0]
                history.append(h)
                mask, va = self.base_mask(state, w)
                logits = (self._features(h, enc, np.array([state.cursor])) @ self.W_out + self.b_out).data[0]
                k = int(np.argmax(np.where(mask, logits, -np.inf)))
                target = None
                b = self.vocab[k]
                if b.startswith(("LA(", "RA(")):
                    kind, label = b[:-1].split("(", 1)
                    cands = va.targets(kind, label)
                    hs = np.concatenate([history[n].data for n in cands])
                    sc = hs @ (self.W_arc.data.T @ h.data[0])
                    target = cands[int(np.argmax(sc))]
                a = self.action_from_base(k, target)
                state = apply(state, a, w, self.config.node_cap)
                actions.append(a)
                prev = k
        if not state.done:
            return actions, AmrGraph((), (), ""), False
        return actions, state.partial_graph, True

    # -- persistence ----------------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "kind": "transition-parser",
            "config": asdict(self.config),
            "node_labels": self.node_labels,
            "edge_labels": self.edge_labels,
        }
        self.params.save(path, meta)

    @classmethod
    def load(cls, path, embedder=None) -> "TransitionParser":
        tensors, meta = ad.load_tensors(path)
        if meta.get("kind") != "transition-parser":
            raise ValueError(f"{path} is not a parser checkpoint")
        model = cls(ParserConfig(**meta["config"]), meta["node_labels"], meta["edge_labels"], embedder)
        model.params.load_values(tensors)
        return model


def build_parser(corpus: list[CorpusEntry], config: ParserConfig, embedder=None) -> TransitionParser:
    """Parser whose vocabulary covers every node and edge label in ``corpus``."""
    nodes = {n.label for e in corpus for n in e.graph.nodes}
    edges = {x.label for e in corpus for x in e.graph.edges}
    return TransitionParser(config, nodes, edges, embedder)


def action_log_prob(parser: TransitionParser, w: Sentence, actions) -> float:
    with ad.no_dropout():
        return parser.action_log_prob(w, actions).item()


def joint_log_prob(parser: TransitionParser, w: Sentence, g: AmrGraph, alignment: dict[str, int]) -> float:
    with ad.no_dropout():
        return parser.joint_log_prob(w, g, alignment).item()


def greedy_decode(parser: TransitionParser, w: Sentence):
    return parser.greedy_decode(w)
