"""IBM Model 1 node-to-word aligner trained with EM.

Every node picks a sentence token uniformly and emits its label from
t(label | word). There is no NULL word: the oracle needs every node
aligned to a real token.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .graph import AmrGraph, CorpusEntry, Sentence, dfs_node_order
from .posterior import AlignmentPosterior

FLOOR = 1e-12


@dataclass
class TranslationTable:
    """t(label | word); words never seen with a label fall back to ``default``."""

    probs: dict[str, dict[str, float]]
    labels: list[str]
    default: float = 0.0
    log_likelihoods: list[float] = field(default_factory=list)

    @property
    def words(self) -> list[str]:
        return sorted(self.probs)

    def t(self, label: str, word: str) -> float:
        row = self.probs.get(word)
        if row is None:
            return self.default
        return row.get(label, 0.0)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for word in sorted(self.probs):
                for label, p in sorted(self.probs[word].items()):
                    f.write(f"{word}\t{label}\t{p!r}\n")

    @classmethod
    def load(cls, path) -> "TranslationTable":
        probs: dict[str, dict[str, float]] = defaultdict(dict)
        labels = set()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected word<TAB>label<TAB>prob")
                probs[parts[0]][parts[1]] = float(parts[2])
                labels.add(parts[1])
        return cls(dict(probs), sorted(labels))


def _pairs(corpus):
    out = []
    for item in corpus:
        if isinstance(item, CorpusEntry):
            words = list(item.sentence.tokens)
            g = item.graph
            labels = [g.label_of(n) for n in dfs_node_order(g)]
        else:
            words, labels = item
            words = list(words.tokens) if isinstance(words, Sentence) else list(words)
            labels = list(labels)
        if not words or not labels:
            raise ValueError("every pair needs at least one word and one label")
        out.append((words, labels))
    return out


def train_em(corpus, iterations: int = 20) -> TranslationTable:
    """Run EM; ``corpus`` holds CorpusEntry objects or (words, labels) pairs.

    The table starts uniform over the whole label vocabulary, so the first
    E-step gives every node a uniform posterior. ``log_likelihoods[k]`` is
    the corpus log-likelihood under the table entering iteration k+1.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    pairs = _pairs(corpus)
    if not pairs:
        raise ValueError("empty corpus")
    labels = sorted({y for _, ys in pairs for y in ys})
    uniform = 1.0 / len(labels)
    table: dict[str, dict[str, float]] | None = None
    lls = []

    def t(label, word):
        if table is None:
            return uniform
        return table.get(word, {}).get(label, 0.0)

    for _ in range(iterations):
        counts: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))
        ll = 0.0
        for words, ys in pairs:
            n = len(words)
            for y in ys:
                scores = [t(y, w) for w in words]
                z = sum(scores)
                ll += math.log(max(z, FLOOR) / n)
                if z <= 0.0:
                    continue
                for w, sc in zip(words, scores):
                    if sc > 0.0:
                        counts[w][y] += sc / z
        lls.append(ll)
        table = {}
        for w, row in counts.items():
            total = sum(row.values())
            table[w] = {y: c / total for y, c in row.items()}
    return TranslationTable(table, labels, 0.0, lls)


def posterior_matrix(table: TranslationTable, w: Sentence, labels_or_graph) -> AlignmentPosterior:
    """Rows t(v_s | w_i) normalized over i, unknown pairs floored at 1e-12."""
    if isinstance(labels_or_graph, AmrGraph):
        g = labels_or_graph
        node_ids = dfs_node_order(g)
        labels = [g.label_of(n) for n in node_ids]
    else:
        labels = list(labels_or_graph)
        node_ids = [str(k) for k in range(1, len(labels) + 1)]
    scores = np.array([[max(table.t(y, word), FLOOR) for word in w.tokens] for y in labels])
    probs = scores / scores.sum(axis=1, keepdims=True)
    return AlignmentPosterior.from_probs(node_ids, probs)


def map_align(table: TranslationTable, w: Sentence, g: AmrGraph) -> dict[str, int]:
    return posterior_matrix(table, w, g).map_alignment()
