import math
import random

import numpy as np
import pytest

from amralign import autodiff as ad
from amralign.graph import CorpusEntry, Sentence, parse_penman
from amralign.layers import CharFeatureEmbedder
from amralign.parser import ParserConfig, TransitionParser, action_log_prob, build_parser, joint_log_prob
from amralign.training import all_alignments, map_update
from amralign.transitions import COPY, END, SHIFT, Action, MachineState, TransitionError, apply, oracle, run_machine

from conftest import random_sentence


def tiny_parser(node_labels=("x",), edge_labels=("r",), node_cap=1, seed=0, noise=0.5):
    cfg = ParserConfig(hidden=6, emb_dim=8, action_dim=4, node_cap=node_cap, seed=seed)
    p = TransitionParser(cfg, node_labels, edge_labels, CharFeatureEmbedder(8))
    rng = np.random.default_rng(seed)
    for t in p.params.params.values():
        t.data += rng.normal(0, noise, size=t.shape)
    return p


def enumerate_sequences(parser, w):
    """Every complete valid action sequence under the parser's masks."""
    out = []

    def rec(state, acts):
        if state.done:
            out.append(acts)
            return
        mask, va = parser.base_mask(state, w)
        for k in np.flatnonzero(mask):
            base = parser.vocab[k]
            if base.startswith(("LA(", "RA(")):
                kind, label = base[:-1].split("(")
                for n in va.targets(kind, label):
                    a = parser.action_from_base(k, n)
                    rec(apply(state, a, w, parser.config.node_cap), acts + [a])
            else:
                a = parser.action_from_base(k)
                rec(apply(state, a, w, parser.config.node_cap), acts + [a])

    rec(MachineState(), [])
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sequence_probabilities_sum_to_one(seed):
    p = tiny_parser(seed=seed)
    w = Sentence("s", ("a", "b"))
    seqs = enumerate_sequences(p, w)
    assert len(seqs) == 26
    total = sum(math.exp(action_log_prob(p, w, s)) for s in seqs)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_sum_to_one_with_two_nodes_per_token():
    p = tiny_parser(node_cap=2, seed=4)
    w = Sentence("s", ("x",))
    seqs = enumerate_sequences(p, w)
    total = sum(math.exp(action_log_prob(p, w, s)) for s in seqs)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_forced_step_has_zero_log_prob():
    p = tiny_parser()
    w = Sentence("s", ("a",))
    # after the only node at the only token, END is the single valid action
    lp_copy = action_log_prob(p, w, [COPY, END])
    lp_node = action_log_prob(p, w, [Action("NODE", "x"), END])
    assert math.exp(lp_copy) + math.exp(lp_node) == pytest.approx(1.0, abs=1e-12)


def test_joint_sub_sum_at_most_one():
    p = tiny_parser(node_labels=("x", "y"), node_cap=2, seed=5)
    g = parse_penman("(a / x :r (b / y))")
    w = Sentence("s", ("x", "q", "y"))
    total = sum(math.exp(joint_log_prob(p, w, g, l)) for l in all_alignments(w, g))
    assert 0.0 < total <= 1.0


def test_invalid_sequences_rejected_with_step():
    p = tiny_parser()
    w = Sentence("s", ("a", "b"))
    with pytest.raises(TransitionError) as info:
        action_log_prob(p, w, [COPY, COPY, END])  # node cap 1
    assert info.value.step == 2
    with pytest.raises(TransitionError) as info:
        action_log_prob(p, w, [Action("NODE", "zzz"), END])
    assert info.value.step == 1
    with pytest.raises(TransitionError):
        action_log_prob(p, w, [COPY])


def test_masked_actions_never_decoded():
    rng = random.Random(0)
    for seed in range(10):
        p = tiny_parser(node_labels=("dog", "cat", "run-01"), edge_labels=("ARG0", "ARG1"), node_cap=2,
                        seed=seed, noise=2.0)
        w = random_sentence(rng, 1, 6)
        acts, g, ok = p.greedy_decode(w)
        assert len(acts) <= 8 * len(w)
        if ok:
            built = run_machine(w, acts, node_cap=2)
            assert built == g
            assert np.isfinite(action_log_prob(p, w, acts))
        else:
            assert g.nodes == ()


def test_overfit_single_example_reproduces_actions():
    g = parse_penman("(p / chase-01 :ARG0 (s / dog) :ARG1 (o / cat))")
    w = Sentence("s", ("the", "dog", "chased", "a", "cat", "."))
    entry = CorpusEntry(w, g)
    l = {"p": 3, "s": 2, "o": 5}
    parser = build_parser([entry], ParserConfig(hidden=16, emb_dim=16, action_dim=8, dropout=0.0, seed=0),
                          CharFeatureEmbedder(16))
    for _ in range(150):
        map_update(parser, entry, l, lr=1e-2)
    acts, out, ok = parser.greedy_decode(w)
    assert ok
    assert acts == oracle(l, w, g)


def test_save_load(tmp_path):
    p = tiny_parser(node_labels=("x", "y"), edge_labels=("r", "s"), seed=3)
    p.save(tmp_path / "p.bin")
    back = TransitionParser.load(tmp_path / "p.bin", CharFeatureEmbedder(8))
    w = Sentence("s", ("a", "b"))
    acts = [COPY, SHIFT, Action("NODE", "y"), Action("LA", "s", 1), END]
    assert action_log_prob(back, w, acts) == action_log_prob(p, w, acts)
    assert back.vocab == p.vocab
    with pytest.raises(ValueError):
        ad.save_tensors(tmp_path / "other.bin", {}, {"kind": "neural-aligner"})
        TransitionParser.load(tmp_path / "other.bin")
