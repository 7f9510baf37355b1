"""Command-line entry point: ``amralign <subcommand> ...``.

Exit status is 0 on success, 1 when inputs fail validation (missing file,
malformed corpus or alignment record, bad arguments) and 2 when a
computation fails at run time (for example a diverging training run).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import aligner as neural
from . import ibm1
from .corpus import (
    CorpusFormatError,
    gen_toy_corpus,
    read_alignments,
    read_corpus,
    read_gold_spans,
    write_alignments,
    write_corpus,
    write_gold_spans,
)
from .evaluation import corpus_permissive_f1, corpus_smatch, format_report
from .graph import CorpusEntry, GraphError, PenmanError, emit_penman
from .parser import ParserConfig, TransitionParser
from .transitions import TransitionError, format_actions, oracle, parse_actions, run_machine

log = logging.getLogger("amralign")


class ValidationError(Exception):
    """Bad input detected before any computation."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


# -- loading helpers ------------------------------------------------------------------

def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{path}: no such file")
    return p


def _load_corpus(path: str) -> list[CorpusEntry]:
    entries = read_corpus(_existing(path))
    seen = set()
    for e in entries:
        if e.sentence.id in seen:
            raise ValidationError(f"{path}: duplicate sentence id {e.sentence.id!r}")
        seen.add(e.sentence.id)
    if not entries:
        raise ValidationError(f"{path}: corpus is empty")
    return entries


def _load_alignments(path: str, corpus: list[CorpusEntry]) -> dict[str, dict[str, int]]:
    aligns = read_alignments(_existing(path))
    for e in corpus:
        a = aligns.get(e.sentence.id)
        if a is None:
            raise ValidationError(f"{path}: no alignment for sentence {e.sentence.id!r}")
        for n in e.graph.nodes:
            tok = a.get(n.node_id)
            if tok is None:
                raise ValidationError(f"{path}: sentence {e.sentence.id!r} lacks node {n.node_id!r}")
            if not 1 <= tok <= len(e.sentence):
                raise ValidationError(
                    f"{path}: sentence {e.sentence.id!r} node {n.node_id!r} token {tok} out of range"
                )
    return aligns


def _is_binary_checkpoint(path: Path) -> bool:
    with open(path, "rb") as f:
        return f.read(4) == b"AMRT"


def _load_aligner(path: str):
    p = _existing(path)
    if _is_binary_checkpoint(p):
        return "neural", neural.NeuralAligner.load(p)
    try:
        return "ibm1", ibm1.TranslationTable.load(p)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _posterior(kind, model, entry):
    if kind == "neural":
        return model.posterior(entry.sentence, entry.graph)
    return ibm1.posterior_matrix(model, entry.sentence, entry.graph)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# -- subcommands --------------------------------------------------------------------------

def cmd_gen_toy(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = gen_toy_corpus(args.n, args.ambiguity, args.seed)
    write_corpus(out / "corpus.amr", entries)
    write_alignments(out / "gold_align.jsonl", [(e.sentence.id, e.gold_alignment, None) for e in entries])
    write_gold_spans(out / "gold_spans.jsonl", entries)
    print(f"wrote {len(entries)} sentences to {out}")


def cmd_align_train(args):
    corpus = _load_corpus(args.corpus)
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    if args.model == "ibm1":
        table = ibm1.train_em(corpus, args.iterations)
        table.save(args.out)
        _write_csv(log_path, ["iteration", "log_likelihood", "seed"],
                   [{"iteration": k + 1, "log_likelihood": f"{ll:.6f}", "seed": args.seed}
                    for k, ll in enumerate(table.log_likelihoods)])
    else:
        cfg = neural.AlignerConfig.desk(seed=args.seed)
        for name in ("epochs", "lr", "hidden"):
            if getattr(args, name) is not None:
                setattr(cfg, name, getattr(args, name))
        rows = []
        model = neural.train(corpus, cfg, log_fn=lambda ep, nll: rows.append(
            {"epoch": ep, "mean_nll": f"{nll:.6f}", "seed": args.seed}))
        model.save(args.out)
        _write_csv(log_path, ["epoch", "mean_nll", "seed"], rows)
    print(f"saved {args.model} aligner to {args.out}; log {log_path}")


def cmd_align_map(args):
    corpus = _load_corpus(args.corpus)
    kind, model = _load_aligner(args.model)
    records = []
    for e in corpus:
        post = _posterior(kind, model, e)
        best = post.map_alignment()
        probs = {nid: float(post.probs[s, best[nid] - 1]) for s, nid in enumerate(post.node_ids)}
        records.append((e.sentence.id, best, probs))
    write_alignments(args.out, records)
    if args.posterior:
        with open(args.posterior, "w", encoding="utf-8") as f:
            for e in corpus:
                f.write(_posterior(kind, model, e).to_json(e.sentence.id) + "\n")


def cmd_align_sample(args):
    corpus = _load_corpus(args.corpus)
    kind, model = _load_aligner(args.model)
    if args.k < 1:
        raise ValidationError("--k must be >= 1")
    rng = np.random.default_rng(args.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        for e in corpus:
            samples = _posterior(kind, model, e).sample(args.k, rng)
            rec = {
                "id": e.sentence.id,
                "samples": [
                    {"alignments": [{"node": n, "token": t} for n, t in l.items()], "log_q": lq}
                    for l, lq in samples
                ],
            }
            f.write(json.dumps(rec) + "\n")


def cmd_oracle(args):
    corpus = _load_corpus(args.corpus)
    aligns = _load_alignments(args.align, corpus)
    with open(args.out, "w", encoding="utf-8") as f:
        for e in corpus:
            actions = oracle(aligns[e.sentence.id], e.sentence, e.graph)
            f.write(f"{e.sentence.id}\t{format_actions(actions)}\n")


def _read_actions(path: str):
    out = {}
    with open(_existing(path), encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            sid, sep, rest = line.rstrip("\n").partition("\t")
            if not sep:
                raise CorpusFormatError(path, lineno, "expected '<id>\\t<actions>'")
            try:
                out[sid] = parse_actions(rest)
            except ValueError as exc:
                raise CorpusFormatError(path, lineno, str(exc)) from exc
    return out


def cmd_machine_run(args):
    corpus = _load_corpus(args.corpus)
    actions = _read_actions(args.actions)
    missing = [e.sentence.id for e in corpus if e.sentence.id not in actions]
    if missing:
        raise ValidationError(f"{args.actions}: no actions for {missing[:5]}")
    with open(args.out, "w", encoding="utf-8") as f:
        for e in corpus:
            try:
                g = run_machine(e.sentence, actions[e.sentence.id])
            except TransitionError as exc:
                raise ValidationError(f"{args.actions}: sentence {e.sentence.id!r}: {exc}") from exc
            f.write(f"# ::id {e.sentence.id}\n# ::tok {' '.join(e.sentence.tokens)}\n{emit_penman(g)}\n\n")


def cmd_parse_train(args):
    from .training import TrainConfig, train_parser

    corpus = _load_corpus(args.corpus)
    kind, model = _load_aligner(args.aligner)
    if args.k < 1:
        raise ValidationError("--k must be >= 1")
    cfg = TrainConfig(
        regime=args.regime, K=args.k, epochs=args.epochs, lr=args.lr, seed=args.seed,
        batch_size=args.batch_size, switch_to_is_epoch=args.switch_to_is,
        parser=ParserConfig(hidden=args.hidden, node_cap=args.node_cap),
    )
    posteriors = [_posterior(kind, model, e) for e in corpus]
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    parser, _ = train_parser(corpus, posteriors, cfg, log_path=log_path)
    parser.save(args.out)
    print(f"saved parser to {args.out}; log {log_path}")


def cmd_parse_decode(args):
    corpus = _load_corpus(args.corpus)
    parser = TransitionParser.load(_existing(args.model))
    failures = 0
    with open(args.out, "w", encoding="utf-8") as f:
        for e in corpus:
            actions, g, ok = parser.greedy_decode(e.sentence)
            f.write(f"# ::id {e.sentence.id}\n# ::tok {' '.join(e.sentence.tokens)}\n")
            if ok and g.nodes:
                f.write(f"# ::actions {format_actions(actions)}\n{emit_penman(g)}\n\n")
            else:
                failures += 1
                f.write("# ::decode-failed step cap reached\n(f / failed-decode)\n\n")
    if failures:
        log.warning("%d sentences hit the decoding step cap", failures)


def cmd_eval_smatch(args):
    pred = _load_corpus(args.pred)
    gold = _load_corpus(args.gold)
    by_id = {e.sentence.id: e.graph for e in pred}
    missing = [e.sentence.id for e in gold if e.sentence.id not in by_id]
    if missing:
        raise ValidationError(f"{args.pred}: no prediction for {missing[:5]}")
    prf = corpus_smatch([(by_id[e.sentence.id], e.graph) for e in gold], args.restarts, args.seed)
    sys.stdout.write(format_report("smatch", prf, args.format))


def cmd_eval_align(args):
    corpus = _load_corpus(args.corpus)
    pred = read_alignments(_existing(args.pred))
    gold = read_gold_spans(_existing(args.gold))
    items = []
    for e in corpus:
        sid = e.sentence.id
        if sid not in gold or not gold[sid]:
            continue
        if sid not in pred:
            raise ValidationError(f"{args.pred}: no alignment for sentence {sid!r}")
        items.append((pred[sid], gold[sid], len(e.sentence)))
    if not items:
        raise ValidationError(f"{args.gold}: no gold spans for any corpus sentence")
    prf = corpus_permissive_f1(items)
    sys.stdout.write(format_report("permissive-align", prf, args.format))


def cmd_grad_check(args):
    from .gradcheck import check_aligner, check_parser

    rng = np.random.default_rng(args.seed)
    reports = []
    targets = ["aligner", "parser"] if args.target == "both" else [args.target]
    for target in targets:
        fn = check_aligner if target == "aligner" else check_parser
        for k in range(args.instances):
            rep = fn(rng, h=args.h, max_coords=args.max_coords)
            reports.append(rep)
            print(f"{target} instance {k + 1}: {rep}")
    worst = max(r.max_rel_error for r in reports)
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    if worst >= args.tol:
        raise RuntimeError("gradient check failed")


# -- argument parsing ---------------------------------------------------------------------

def build_arg_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="amralign", description="AMR alignment, oracle and parser training toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-toy", help="generate a synthetic corpus with gold alignments")
    p.add_argument("--n", type=int, required=True, help="number of sentences")
    p.add_argument("--ambiguity", choices=["none", "synonym", "span"], default="none")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen_toy)

    p = sub.add_parser("align-train", help="train an IBM Model 1 or neural aligner")
    p.add_argument("model", choices=["ibm1", "neural"])
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--log", help="CSV training log (default: <out>.log.csv)")
    p.add_argument("--iterations", type=int, default=20, help="EM iterations (ibm1)")
    p.add_argument("--epochs", type=int, help="training epochs (neural)")
    p.add_argument("--lr", type=float, help="learning rate (neural)")
    p.add_argument("--hidden", type=int, help="LSTM width (neural)")
    p.set_defaults(fn=cmd_align_train)

    p = sub.add_parser("align-map", help="write MAP alignments")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="alignment JSONL")
    p.add_argument("--posterior", help="also write full posterior rows as JSONL")
    p.set_defaults(fn=cmd_align_map)

    p = sub.add_parser("align-sample", help="sample alignments from the posterior")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_align_sample)

    p = sub.add_parser("oracle", help="derive oracle action sequences")
    p.add_argument("--corpus", required=True)
    p.add_argument("--align", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("machine-run", help="execute action sequences into graphs")
    p.add_argument("--corpus", required=True, help="corpus supplying the sentences")
    p.add_argument("--actions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_machine_run)

    p = sub.add_parser("parse-train", help="train the transition parser")
    p.add_argument("--regime", choices=["map", "pr", "is"], required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--aligner", required=True, help="aligner checkpoint (frozen)")
    p.add_argument("--k", type=int, default=5, help="samples per example for pr/is")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--node-cap", type=int, default=4, help="max nodes generated per cursor position")
    p.add_argument("--switch-to-is", type=int, help="epoch from which a pr run continues with is")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="CSV training log (default: <out>.log.csv)")
    p.set_defaults(fn=cmd_parse_train)

    p = sub.add_parser("parse-decode", help="greedy-decode graphs for a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_parse_decode)

    p = sub.add_parser("eval-smatch", help="corpus Smatch of predicted vs gold graphs")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.set_defaults(fn=cmd_eval_smatch)

    p = sub.add_parser("eval-align", help="permissive alignment F1 against gold spans")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True, help="gold span JSONL")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.set_defaults(fn=cmd_eval_align)

    p = sub.add_parser("grad-check", help="finite-difference check of aligner and parser gradients")
    p.add_argument("--target", choices=["aligner", "parser", "both"], default="both")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=20, help="coordinates sampled per parameter")
    p.set_defaults(fn=cmd_grad_check)
    return ap


def main(argv=None) -> int:
    try:
        args = build_arg_parser().parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.fn(args)
    except (ValidationError, CorpusFormatError, PenmanError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (neural.TrainingDivergence, FloatingPointError, RuntimeError, TransitionError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
