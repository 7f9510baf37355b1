"""Finite-difference gradient checks of the aligner and parser losses on small random instances."""

from __future__ import annotations

import numpy as np

from . import aligner as neural
from .autodiff import GradCheckReport, grad_check
from .corpus import gen_toy_corpus
from .graph import graph_to_tree, linearize
from .layers import CharFeatureEmbedder
from .parser import ParserConfig, build_parser
from .transitions import oracle


def _instance(rng: np.random.Generator):
    level = ["none", "synonym", "span"][int(rng.integers(3))]
    return gen_toy_corpus(1, level, int(rng.integers(1 << 30)))[0]


def check_aligner(rng: np.random.Generator, h: float = 1e-5, tol: float = 1e-4, max_coords: int | None = 20,
                  hidden: int = 6, emb_dim: int = 8) -> GradCheckReport:
    """Check ``-log q(v | w)`` on one random toy sentence with a freshly initialized aligner."""
    entry = _instance(rng)
    cfg = neural.AlignerConfig(hidden=hidden, emb_dim=emb_dim, seed=int(rng.integers(1 << 30)),
                               contextual_emission=bool(rng.integers(2)))
    model = neural.NeuralAligner(cfg, [n.label for n in entry.graph.nodes], CharFeatureEmbedder(emb_dim))
    # move away from the symmetric initialization so every parameter matters
    for p in model.params.params.values():
        p.data += rng.normal(0.0, 0.1, size=p.shape)
    lin = linearize(graph_to_tree(entry.graph))

    def loss():
        return -model.sequence_log_likelihood(entry.sentence, lin)

    return grad_check(loss, model.params, h=h, tol=tol, max_coords=max_coords, rng=rng)


def check_parser(rng: np.random.Generator, h: float = 1e-5, tol: float = 1e-4, max_coords: int | None = 20,
                 hidden: int = 6, emb_dim: int = 8) -> GradCheckReport:
    """Check ``-log p(O(l, w, g) | w)`` for a random alignment ``l`` of one toy sentence."""
    entry = _instance(rng)
    cfg = ParserConfig(hidden=hidden, emb_dim=emb_dim, action_dim=4, seed=int(rng.integers(1 << 30)))
    parser = build_parser([entry], cfg, CharFeatureEmbedder(emb_dim))
    for p in parser.params.params.values():
        p.data += rng.normal(0.0, 0.1, size=p.shape)
    w, g = entry.sentence, entry.graph
    # keep at most node_cap nodes per token so the sequence stays admissible
    while True:
        alignment = {n.node_id: int(rng.integers(1, len(w) + 1)) for n in g.nodes}
        if max(list(alignment.values()).count(t) for t in alignment.values()) <= cfg.node_cap:
            break
    actions = oracle(alignment, w, g)

    def loss():
        return -parser.action_log_prob(w, actions)

    return grad_check(loss, parser.params, h=h, tol=tol, max_coords=max_coords, rng=rng)
