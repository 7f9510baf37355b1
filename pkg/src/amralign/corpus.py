"""Synthetic corpora and the corpus / alignment file formats."""

from __future__ import annotations

import json
import random
from pathlib import Path

from .graph import AmrEdge, AmrGraph, AmrNode, CorpusEntry, PenmanError, Sentence, emit_penman, parse_penman

AMBIGUITY_LEVELS = ("none", "synonym", "span")

# label -> surface forms; the first form is the only one used at level "none"
NOUNS = {
    "dog": ["dog", "hound", "puppy", "mutt"],
    "cat": ["cat", "kitten", "kitty", "feline"],
    "boy": ["boy", "lad", "kid", "youngster"],
}
COMPOUNDS = {
    "teddy-bear": ("teddy", "bear"),
    "fire-truck": ("fire", "truck"),
    "police-officer": ("police", "officer"),
}
TRANSITIVE = {
    "chase-01": ["chased", "chases", "pursued"],
    "see-01": ["saw", "sees", "spotted"],
    "like-01": ["liked", "likes", "adored"],
}
INTRANSITIVE = {
    "run-02": ["ran", "runs", "sprinted"],
    "sleep-01": ["slept", "sleeps", "dozed"],
}
DETERMINERS = ["the", "a", "this", "that"]


class CorpusFormatError(ValueError):
    """Schema violation in an input file; carries file and line."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


def gen_toy_corpus(n: int, ambiguity: str = "none", seed: int = 0) -> list[CorpusEntry]:
    """Templated ``det subject verb [det object] .`` sentences with gold alignments.

    ``synonym`` draws several surface words per node label; ``span`` turns
    noun slots into two-token compounds whose node has a two-token gold
    span (gold token alignment = first token).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if ambiguity not in AMBIGUITY_LEVELS:
        raise ValueError(f"ambiguity must be one of {AMBIGUITY_LEVELS}")
    rng = random.Random(seed)
    entries = []
    for k in range(n):
        transitive = rng.random() < 0.8
        if ambiguity == "span":
            # at least one compound per sentence
            slots = [rng.random() < 0.5 for _ in range(2 if transitive else 1)]
            if not any(slots):
                slots[rng.randrange(len(slots))] = True
        else:
            slots = [False, False]

        def noun(compound):
            if compound:
                label = rng.choice(sorted(COMPOUNDS))
                return label, list(COMPOUNDS[label])
            label = rng.choice(sorted(NOUNS))
            forms = NOUNS[label] if ambiguity == "synonym" else NOUNS[label][:1]
            return label, [rng.choice(forms)]

        def verb(table):
            label = rng.choice(sorted(table))
            forms = table[label] if ambiguity == "synonym" else table[label][:1]
            return label, rng.choice(forms)

        subj_label, subj_words = noun(slots[0])
        pred_label, verb_word = verb(TRANSITIVE if transitive else INTRANSITIVE)
        tokens = [rng.choice(DETERMINERS)]
        spans: dict[str, tuple[int, int]] = {}
        subj_start = len(tokens) + 1
        tokens += subj_words
        spans["s"] = (subj_start, subj_start + len(subj_words))
        tokens.append(verb_word)
        spans["p"] = (len(tokens), len(tokens) + 1)
        nodes = [AmrNode("p", pred_label), AmrNode("s", subj_label)]
        edges = [AmrEdge("p", "s", "ARG0")]
        if transitive:
            obj_label, obj_words = noun(slots[1])
            tokens.append(rng.choice(DETERMINERS))
            obj_start = len(tokens) + 1
            tokens += obj_words
            spans["o"] = (obj_start, obj_start + len(obj_words))
            nodes.append(AmrNode("o", obj_label))
            edges.append(AmrEdge("p", "o", "ARG1"))
        tokens.append(".")
        graph = AmrGraph(tuple(nodes), tuple(edges), "p")
        gold = {nid: span[0] for nid, span in spans.items()}
        entries.append(CorpusEntry(Sentence(f"toy-{seed}-{k}", tuple(tokens)), graph, gold, spans))
    return entries


# --- files -----------------------------------------------------------------

def write_corpus(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(f"# ::id {e.sentence.id}\n")
            f.write(f"# ::tok {' '.join(e.sentence.tokens)}\n")
            f.write(emit_penman(e.graph) + "\n\n")


def read_corpus(path) -> list[CorpusEntry]:
    """Read ``# ::id`` / ``# ::tok`` / Penman blocks separated by blank lines."""
    path = Path(path)
    entries = []
    block: list[tuple[int, str]] = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines + [""], start=1):
        if line.strip():
            block.append((lineno, line))
            continue
        if not block:
            continue
        sid, toks, graph_lines = None, None, []
        for ln, text in block:
            if text.startswith("# ::id"):
                sid = text[len("# ::id"):].strip()
            elif text.startswith("# ::tok"):
                toks = text[len("# ::tok"):].split()
            elif text.startswith("#"):
                continue
            else:
                graph_lines.append(text)
        start = block[0][0]
        if sid is None:
            raise CorpusFormatError(path, start, "missing '# ::id' line")
        if not toks:
            raise CorpusFormatError(path, start, "missing or empty '# ::tok' line")
        if not graph_lines:
            raise CorpusFormatError(path, start, "missing Penman graph")
        try:
            graph = parse_penman(" ".join(graph_lines))
        except PenmanError as exc:
            raise CorpusFormatError(path, start, str(exc)) from exc
        entries.append(CorpusEntry(Sentence(sid, tuple(toks)), graph))
        block = []
    return entries


def write_alignments(path, records) -> None:
    """``records``: iterable of ``(sent_id, {node: token}, probs_or_None)``."""
    with open(path, "w", encoding="utf-8") as f:
        for sid, alignment, probs in records:
            items = []
            for node, tok in alignment.items():
                item = {"node": node, "token": int(tok)}
                if probs is not None:
                    item["prob"] = float(probs[node])
                items.append(item)
            f.write(json.dumps({"id": sid, "alignments": items}) + "\n")


def _read_jsonl(path):
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, lineno, f"invalid JSON: {exc}") from exc


def read_alignments(path) -> dict[str, dict[str, int]]:
    out = {}
    for lineno, obj in _read_jsonl(path):
        try:
            out[str(obj["id"])] = {str(a["node"]): int(a["token"]) for a in obj["alignments"]}
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(path, lineno, f"bad alignment record: {exc}") from exc
    return out


def write_gold_spans(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            subgraphs = [{"nodes": [nid], "span": list(span)} for nid, span in (e.gold_spans or {}).items()]
            f.write(json.dumps({"id": e.sentence.id, "subgraphs": subgraphs}) + "\n")


def read_gold_spans(path) -> dict[str, list[tuple[list[str], tuple[int, int]]]]:
    out = {}
    for lineno, obj in _read_jsonl(path):
        try:
            out[str(obj["id"])] = [
                ([str(n) for n in sg["nodes"]], (int(sg["span"][0]), int(sg["span"][1])))
                for sg in obj["subgraphs"]
            ]
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise CorpusFormatError(path, lineno, f"bad span record: {exc}") from exc
    return out
