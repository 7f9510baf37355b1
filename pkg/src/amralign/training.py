"""Parser training with a frozen aligner: MAP, posterior regularization, importance sampling.

All three regimes push gradients of ``-sum_k c_k log p(a_k | w)`` where
``a_k`` are oracle sequences of alignments:

* MAP: the single MAP alignment, ``c = 1``;
* PR: K samples from the aligner posterior, ``c_k = 1/K``;
* IS: K samples with self-normalized weights ``p(a_k)/q(l_k)``, held
  constant during backpropagation.

Identical samples are merged (their coefficients added) before scoring.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import AmrGraph, CorpusEntry, Sentence
from .parser import ParserConfig, TransitionParser, build_parser
from .posterior import AlignmentPosterior
from .transitions import oracle

log = logging.getLogger(__name__)

REGIMES = ("MAP", "PR", "IS")
MAX_ENUMERATION = 100_000


def normalized_importance_weights(log_weights) -> np.ndarray:
    """Self-normalized weights ``exp(lw - logsumexp(lw))``."""
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.size == 0:
        raise ValueError("no log-weights given")
    if np.isnan(lw).any():
        raise ValueError("log-weights contain NaN")
    m = lw.max()
    if not np.isfinite(m):
        raise ValueError("all importance weights are zero (every log-weight is -inf)")
    e = np.exp(lw - m)
    return e / e.sum()


def _key(alignment: dict[str, int]):
    return tuple(sorted(alignment.items()))


def _merge(alignments, coefs):
    merged: OrderedDict = OrderedDict()
    for l, c in zip(alignments, coefs):
        k = _key(l)
        if k in merged:
            merged[k][1] += c
        else:
            merged[k] = [l, c]
    return list(merged.values())


def _weighted_gradient(parser: TransitionParser, entry: CorpusEntry, pairs, rng=None, train=False) -> float:
    """Backpropagate ``-sum c * log p(O(l))`` over ``(alignment, c)`` pairs; returns the loss."""
    w, g = entry.sentence, entry.graph
    enc = parser.encode(w, rng, train)
    loss = None
    for l, c in pairs:
        lp = parser.score_steps(enc, parser.trace(w, oracle(l, w, g)), rng, train)
        term = lp * (-c)
        loss = term if loss is None else loss + term
    ad.backward(loss)
    return loss.item()


def _log_probs(parser, entry, alignments) -> np.ndarray:
    w, g = entry.sentence, entry.graph
    with ad.no_dropout():
        enc = parser.encode(w)
        cache = {}
        out = []
        for l in alignments:
            k = _key(l)
            if k not in cache:
                cache[k] = parser.score_steps(enc, parser.trace(w, oracle(l, w, g))).item()
            out.append(cache[k])
    return np.array(out)


# -- gradients (accumulated into parser.params[...].grad) ----------------------------

def map_gradient(parser, entry, alignment, rng=None, train=False) -> float:
    return _weighted_gradient(parser, entry, [(alignment, 1.0)], rng, train)


def pr_gradient(parser, posterior: AlignmentPosterior, entry, K: int, sample_rng, rng=None, train=False,
                samples=None) -> float:
    """(1/K) sum_k grad log p(O(l_k)) with l_k ~ q; merged duplicates get count/K."""
    samples = samples if samples is not None else posterior.sample(K, sample_rng)
    alignments = [l for l, _ in samples]
    pairs = _merge(alignments, [1] * len(alignments))
    pairs = [(l, c / len(alignments)) for l, c in pairs]
    return _weighted_gradient(parser, entry, pairs, rng, train)


def is_gradient(parser, posterior: AlignmentPosterior, entry, K: int, sample_rng, rng=None, train=False,
                samples=None) -> float:
    """sum_k w_k grad log p(O(l_k)) with detached normalized weights w_k."""
    samples = samples if samples is not None else posterior.sample(K, sample_rng)
    alignments = [l for l, _ in samples]
    log_q = np.array([lq for _, lq in samples])
    log_p = _log_probs(parser, entry, alignments)
    weights = normalized_importance_weights(log_p - log_q)
    return _weighted_gradient(parser, entry, _merge(alignments, weights), rng, train)


def map_update(parser, entry, alignment, lr: float) -> float:
    parser.params.zero_grad()
    loss = map_gradient(parser, entry, alignment)
    ad.adam_step(parser.params, lr)
    return loss


def pr_update(parser, posterior, entry, K: int, sample_rng, lr: float) -> float:
    parser.params.zero_grad()
    loss = pr_gradient(parser, posterior, entry, K, sample_rng)
    ad.adam_step(parser.params, lr)
    return loss


def is_update(parser, posterior, entry, K: int, sample_rng, lr: float) -> float:
    parser.params.zero_grad()
    loss = is_gradient(parser, posterior, entry, K, sample_rng)
    ad.adam_step(parser.params, lr)
    return loss


# -- objectives -----------------------------------------------------------------------

def pr_objective(parser, posterior: AlignmentPosterior, entry, K: int, rng, samples=None) -> float:
    """Monte Carlo E_q[log p(l, g | w)] over K samples plus the exact entropy of q."""
    samples = samples if samples is not None else posterior.sample(K, rng)
    log_p = _log_probs(parser, entry, [l for l, _ in samples])
    return float(log_p.mean() + posterior.entropy())


def is_objective(parser, posterior: AlignmentPosterior, entry, K: int, rng, samples=None) -> float:
    """log (1/K) sum_k p(l_k, g | w) / q(l_k)."""
    samples = samples if samples is not None else posterior.sample(K, rng)
    log_p = _log_probs(parser, entry, [l for l, _ in samples])
    lw = log_p - np.array([lq for _, lq in samples])
    m = lw.max()
    return float(m + math.log(np.exp(lw - m).mean()))


def all_alignments(w: Sentence, g: AmrGraph):
    ids = [n.node_id for n in g.nodes]
    for combo in itertools.product(range(1, len(w) + 1), repeat=len(ids)):
        yield dict(zip(ids, combo))


def brute_force_log_marginal(parser, w: Sentence, g: AmrGraph) -> float:
    """log sum_l p(O(l, w, g) | w) by enumerating every total alignment."""
    count = len(w) ** len(g.nodes)
    if count > MAX_ENUMERATION:
        raise ValueError(f"{count} alignments exceed the enumeration limit of {MAX_ENUMERATION}")
    entry = CorpusEntry(w, g)
    lp = _log_probs(parser, entry, list(all_alignments(w, g)))
    m = lp.max()
    return float(m + math.log(np.exp(lp - m).sum()))


# -- training loop ----------------------------------------------------------------------

@dataclass
class TrainConfig:
    regime: str = "MAP"
    K: int = 5
    epochs: int = 30
    lr: float = 5e-4
    seed: int = 0
    batch_size: int = 1
    switch_to_is_epoch: int | None = None
    parser: ParserConfig = field(default_factory=ParserConfig)

    def __post_init__(self):
        self.regime = self.regime.upper()
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


LOG_FIELDS = ["epoch", "regime", "K", "mean_loss", "mean_objective", "seed"]


def train_parser(corpus: list[CorpusEntry], posteriors, config: TrainConfig, log_path=None, embedder=None,
                 log_fn=None) -> tuple[TransitionParser, list[dict]]:
    """Train a fresh parser on ``corpus`` with a frozen aligner.

    ``posteriors[k]`` is the aligner posterior for ``corpus[k]``. PR and IS
    draw fresh samples for every example in every epoch. With
    ``switch_to_is_epoch`` set, a PR run switches to IS from that epoch on.
    Returns the parser and the per-epoch log rows (also written as CSV to
    ``log_path`` when given).
    """
    if len(posteriors) != len(corpus):
        raise ValueError("one posterior per corpus entry required")
    pconf = ParserConfig(**{**config.parser.__dict__, "seed": config.seed})
    parser = build_parser(corpus, pconf, embedder)
    order_rng = np.random.default_rng(config.seed + 101)
    sample_rng = np.random.default_rng(config.seed + 202)
    drop_rng = np.random.default_rng(config.seed + 303)
    maps = [q.map_alignment() for q in posteriors]
    rows = []
    writer = None
    fh = open(log_path, "w", newline="") if log_path else None
    try:
        if fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            writer.writeheader()
        for epoch in range(1, config.epochs + 1):
            regime = config.regime
            if config.switch_to_is_epoch is not None and epoch >= config.switch_to_is_epoch:
                regime = "IS"
            t0 = time.time()
            total_loss = total_obj = 0.0
            parser.params.zero_grad()
            pending = 0
            for idx in order_rng.permutation(len(corpus)):
                entry, q = corpus[idx], posteriors[idx]
                if regime == "MAP":
                    pairs = [(maps[idx], 1.0)]
                else:
                    samples = q.sample(config.K, sample_rng)
                    alignments = [l for l, _ in samples]
                    if regime == "PR":
                        pairs = [(l, c / config.K) for l, c in _merge(alignments, [1] * config.K)]
                    else:
                        lw = _log_probs(parser, entry, alignments) - np.array([lq for _, lq in samples])
                        pairs = _merge(alignments, normalized_importance_weights(lw))
                        m = lw.max()
                        is_obj = float(m + math.log(np.exp(lw - m).mean()))
                # scale so a batch step averages over its examples
                scaled = [(l, c / config.batch_size) for l, c in pairs]
                loss = _weighted_gradient(parser, entry, scaled, drop_rng, train=True) * config.batch_size
                total_loss += loss
                if regime == "MAP":
                    obj = -loss
                elif regime == "PR":
                    # merged coefficients are count/K, so -loss is the sample mean of log p
                    obj = -loss + q.entropy()
                else:
                    obj = is_obj
                total_obj += obj
                pending += 1
                if pending == config.batch_size:
                    ad.adam_step(parser.params, config.lr)
                    parser.params.zero_grad()
                    pending = 0
            if pending:
                ad.adam_step(parser.params, config.lr)
                parser.params.zero_grad()
            row = {
                "epoch": epoch,
                "regime": regime,
                "K": config.K if regime != "MAP" else 1,
                "mean_loss": f"{total_loss / len(corpus):.6f}",
                "mean_objective": f"{total_obj / len(corpus):.6f}",
                "seed": config.seed,
            }
            rows.append(row)
            if writer:
                writer.writerow(row)
                fh.flush()
            log.debug("parser epoch %d %s loss %s (%.1fs)", epoch, regime, row["mean_loss"], time.time() - t0)
            if log_fn is not None:
                log_fn(row)
    finally:
        if fh:
            fh.close()
    return parser, rows


def decode_corpus(parser: TransitionParser, entries) -> list[tuple[AmrGraph, bool]]:
    out = []
    for e in entries:
        _, g, ok = parser.greedy_decode(e.sentence)
        out.append((g, ok))
    return out
