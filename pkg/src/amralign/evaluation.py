"""Smatch and permissive alignment F1."""

from __future__ import annotations

import csv
import io
import itertools
import random
from collections import Counter
from dataclasses import dataclass

from .graph import AmrGraph

# inverse relations that are real role names rather than inverted edges
_NOT_INVERTED = {"consist-of", "prep-out-of", "prep-on-behalf-of"}


@dataclass(frozen=True)
class TripleSet:
    """Smatch triples of one graph with variables renamed to 0..n-1.

    ``instances[i]`` is the lowercased label of variable ``i``; relations
    are ``(source, label, target)`` with ``X-of`` edges turned around.
    """

    variables: tuple
    instances: tuple
    relations: tuple
    root: int | None

    @property
    def size(self) -> int:
        return len(self.instances) + len(self.relations) + (self.root is not None)


def to_triples(g: AmrGraph) -> TripleSet:
    variables = tuple(n.node_id for n in g.nodes)
    index = {v: i for i, v in enumerate(variables)}
    instances = tuple(n.label.lower() for n in g.nodes)
    rels = []
    for e in g.edges:
        label = e.label.lower()
        s, t = index[e.source], index[e.target]
        if label.endswith("-of") and label not in _NOT_INVERTED:
            label, s, t = label[:-3], t, s
        rels.append((s, label, t))
    root = index[g.root] if g.nodes else None
    return TripleSet(variables, instances, tuple(rels), root)


def _match_count(mapping, pred: TripleSet, gold: TripleSet, gold_rels: Counter) -> int:
    count = sum(1 for p, g in enumerate(mapping) if g is not None and pred.instances[p] == gold.instances[g])
    mapped = Counter()
    for s, label, t in pred.relations:
        ms, mt = mapping[s], mapping[t]
        if ms is not None and mt is not None:
            mapped[(ms, label, mt)] += 1
    count += sum(min(c, gold_rels[k]) for k, c in mapped.items())
    if pred.root is not None and gold.root is not None and mapping[pred.root] == gold.root:
        count += 1
    return count


def _prf(matched: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _smart_init(pred: TripleSet, gold: TripleSet, rng: random.Random):
    """Map each predicted variable to a random unused gold variable with the same label."""
    used = set()
    mapping = []
    for label in pred.instances:
        cands = [g for g, gl in enumerate(gold.instances) if gl == label and g not in used]
        if cands:
            g = rng.choice(cands)
            used.add(g)
            mapping.append(g)
        else:
            mapping.append(None)
    return mapping


def _random_init(pred: TripleSet, gold: TripleSet, rng: random.Random):
    gold_ids = list(range(len(gold.instances)))
    rng.shuffle(gold_ids)
    mapping = [gold_ids[i] if i < len(gold_ids) else None for i in range(len(pred.instances))]
    rng.shuffle(mapping)
    return mapping


def _hill_climb(mapping, pred, gold, gold_rels):
    """Steepest ascent over remap and swap moves until no move improves."""
    best = _match_count(mapping, pred, gold, gold_rels)
    n_gold = len(gold.instances)
    while True:
        move_best, move_map = best, None
        used = set(g for g in mapping if g is not None)
        for p in range(len(mapping)):
            for g in [None] + [g for g in range(n_gold) if g not in used]:
                if g == mapping[p]:
                    continue
                cand = list(mapping)
                cand[p] = g
                sc = _match_count(cand, pred, gold, gold_rels)
                if sc > move_best:
                    move_best, move_map = sc, cand
        for p, q in itertools.combinations(range(len(mapping)), 2):
            if mapping[p] == mapping[q]:
                continue
            cand = list(mapping)
            cand[p], cand[q] = cand[q], cand[p]
            sc = _match_count(cand, pred, gold, gold_rels)
            if sc > move_best:
                move_best, move_map = sc, cand
        if move_map is None:
            return best, mapping
        best, mapping = move_best, move_map


def smatch_counts(pred: AmrGraph, gold: AmrGraph, restarts: int = 4, seed: int = 0) -> tuple[int, int, int]:
    """Return ``(matched, |pred triples|, |gold triples|)`` under the best mapping found."""
    pt, gt = to_triples(pred), to_triples(gold)
    if not pt.instances or not gt.instances:
        return 0, pt.size, gt.size
    gold_rels = Counter(gt.relations)
    rng = random.Random(seed)
    starts = [_smart_init(pt, gt, rng)] + [_random_init(pt, gt, rng) for _ in range(restarts)]
    best = 0
    for start in starts:
        score, _ = _hill_climb(start, pt, gt, gold_rels)
        best = max(best, score)
        if best == min(pt.size, gt.size):
            break
    return best, pt.size, gt.size


def smatch(pred: AmrGraph, gold: AmrGraph, restarts: int = 4, seed: int = 0) -> tuple[float, float, float]:
    """Precision, recall and F1 of matched triples (hill-climbing search).

    Triples are one instance triple per variable, one per edge and one
    TOP triple for the root; labels are compared lowercased.
    """
    return _prf(*smatch_counts(pred, gold, restarts, seed))


def exhaustive_smatch(pred: AmrGraph, gold: AmrGraph) -> tuple[float, float, float]:
    """Same score as :func:`smatch` but maximized over every injective mapping."""
    pt, gt = to_triples(pred), to_triples(gold)
    if not pt.instances or not gt.instances:
        return _prf(0, pt.size, gt.size)
    gold_rels = Counter(gt.relations)
    n_p, n_g = len(pt.instances), len(gt.instances)
    best = 0
    for k in range(min(n_p, n_g) + 1):
        for pvars in itertools.combinations(range(n_p), k):
            for gvars in itertools.permutations(range(n_g), k):
                mapping = [None] * n_p
                for p, g in zip(pvars, gvars):
                    mapping[p] = g
                best = max(best, _match_count(mapping, pt, gt, gold_rels))
    return _prf(best, pt.size, gt.size)


def corpus_smatch(pairs, restarts: int = 4, seed: int = 0) -> tuple[float, float, float]:
    """Micro-averaged Smatch over ``(pred, gold)`` pairs."""
    m = np_ = ng = 0
    for pred, gold in pairs:
        a, b, c = smatch_counts(pred, gold, restarts, seed)
        m, np_, ng = m + a, np_ + b, ng + c
    return _prf(m, np_, ng)


# -- permissive alignment F1 ---------------------------------------------------

def _node_spans(gold, n_tokens=None) -> dict[str, tuple[int, int]]:
    if not gold:
        raise ValueError("gold alignment is empty; permissive F1 is undefined")
    spans = {}
    for nodes, (start, end) in gold:
        if start < 1 or end <= start or (n_tokens is not None and end - 1 > n_tokens):
            raise ValueError(f"gold span [{start}, {end}) is empty or out of range")
        for nid in nodes:
            spans[nid] = (start, end)
    return spans


def permissive_counts(pred: dict[str, int], gold, n_tokens: int | None = None) -> tuple[int, int, int]:
    """Return ``(correct, predicted on gold-covered nodes, gold node entries)``."""
    spans = _node_spans(gold, n_tokens)
    correct = predicted = 0
    for nid, tok in pred.items():
        if n_tokens is not None and not 1 <= tok <= n_tokens:
            raise ValueError(f"predicted token {tok} for node {nid!r} is out of range 1..{n_tokens}")
        if nid not in spans:
            continue
        predicted += 1
        start, end = spans[nid]
        correct += start <= tok < end
    return correct, predicted, len(spans)


def permissive_alignment_f1(pred: dict[str, int], gold, n_tokens: int | None = None):
    """A prediction is correct when its token falls inside the node's gold span.

    ``gold`` is a list of ``(node ids, (start, end))`` with 1-based,
    end-exclusive spans. Nodes missing from gold are ignored.
    """
    c, p, g = permissive_counts(pred, gold, n_tokens)
    return _prf(c, p, g)


def corpus_permissive_f1(items) -> tuple[float, float, float]:
    """Micro-average over ``(pred, gold, n_tokens)`` triples."""
    c = p = g = 0
    for pred, gold, n in items:
        a, b, d = permissive_counts(pred, gold, n)
        c, p, g = c + a, p + b, g + d
    return _prf(c, p, g)


def format_report(name: str, prf, fmt: str = "text") -> str:
    p, r, f = prf
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "precision", "recall", "f1"])
        w.writerow([name, f"{p:.6f}", f"{r:.6f}", f"{f:.6f}"])
        return buf.getvalue()
    return f"{name}: P={p:.4f} R={r:.4f} F1={f:.4f}\n"
