import json

import pytest

from amralign.corpus import (
    CorpusFormatError,
    gen_toy_corpus,
    read_alignments,
    read_corpus,
    read_gold_spans,
    write_alignments,
    write_corpus,
    write_gold_spans,
)


@pytest.mark.parametrize("level", ["none", "synonym", "span"])
def test_generator_contract(level):
    corpus = gen_toy_corpus(50, level, seed=3)
    assert len(corpus) == 50
    for e in corpus:
        ids = {n.node_id for n in e.graph.nodes}
        assert set(e.gold_alignment) == ids
        for nid, tok in e.gold_alignment.items():
            start, end = e.gold_spans[nid]
            assert start == tok and 1 <= start < end <= len(e.sentence) + 1
        assert e.graph.is_connected()


def test_none_level_uses_one_surface_form_per_label():
    corpus = gen_toy_corpus(200, "none", seed=0)
    forms = {}
    for e in corpus:
        for nid, tok in e.gold_alignment.items():
            forms.setdefault(e.graph.label_of(nid), set()).add(e.sentence.word(tok))
    assert all(len(v) == 1 for v in forms.values())


def test_synonym_level_has_several_forms():
    corpus = gen_toy_corpus(200, "synonym", seed=0)
    forms = {}
    for e in corpus:
        for nid, tok in e.gold_alignment.items():
            forms.setdefault(e.graph.label_of(nid), set()).add(e.sentence.word(tok))
    assert any(len(v) > 1 for v in forms.values())


def test_span_level_has_two_token_span():
    e = gen_toy_corpus(1, "span", seed=1)[0]
    assert any(end - start == 2 for start, end in e.gold_spans.values())


def test_deterministic(tmp_path):
    a, b = tmp_path / "a.amr", tmp_path / "b.amr"
    write_corpus(a, gen_toy_corpus(30, "span", seed=7))
    write_corpus(b, gen_toy_corpus(30, "span", seed=7))
    assert a.read_bytes() == b.read_bytes()


def test_bad_arguments():
    with pytest.raises(ValueError):
        gen_toy_corpus(0)
    with pytest.raises(ValueError):
        gen_toy_corpus(3, "nonsense")


def test_file_round_trip(tmp_path):
    corpus = gen_toy_corpus(20, "span", seed=2)
    write_corpus(tmp_path / "c.amr", corpus)
    back = read_corpus(tmp_path / "c.amr")
    assert [e.sentence for e in back] == [e.sentence for e in corpus]
    assert [e.graph for e in back] == [e.graph for e in corpus]

    write_alignments(tmp_path / "a.jsonl", [(e.sentence.id, e.gold_alignment, None) for e in corpus])
    aligns = read_alignments(tmp_path / "a.jsonl")
    assert aligns == {e.sentence.id: e.gold_alignment for e in corpus}

    write_gold_spans(tmp_path / "s.jsonl", corpus)
    spans = read_gold_spans(tmp_path / "s.jsonl")
    for e in corpus:
        assert {n[0]: span for n, span in spans[e.sentence.id]} == e.gold_spans


def test_alignment_file_schema(tmp_path):
    write_alignments(tmp_path / "a.jsonl", [("x", {"p": 2, "s": 1}, {"p": 0.5, "s": 1.0})])
    rec = json.loads((tmp_path / "a.jsonl").read_text())
    assert rec == {"id": "x", "alignments": [{"node": "p", "token": 2, "prob": 0.5},
                                             {"node": "s", "token": 1, "prob": 1.0}]}


def test_errors_carry_file_and_line(tmp_path):
    bad = tmp_path / "bad.amr"
    bad.write_text("# ::id a\n# ::tok x y\n(a / x)\n\n# ::id b\n# ::tok y\n(b / y :r (c / z)\n")
    with pytest.raises(CorpusFormatError) as info:
        read_corpus(bad)
    assert info.value.line == 5 and str(bad) in str(info.value)

    missing_tok = tmp_path / "m.amr"
    missing_tok.write_text("# ::id a\n(a / x)\n")
    with pytest.raises(CorpusFormatError):
        read_corpus(missing_tok)

    bad_json = tmp_path / "a.jsonl"
    bad_json.write_text('{"id": "a", "alignments": []}\n{"id": "b", "alignments": [{"node": "x"}]}\n')
    with pytest.raises(CorpusFormatError) as info:
        read_alignments(bad_json)
    assert info.value.line == 2
