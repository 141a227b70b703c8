import csv

import pytest

from rrae.model import ModelConfig, init_model
from rrae.report import (curves_from_eval, length_curves, mismatches, sentence_records,
                         sentence_table, write_curves_csv, write_sentence_tsv)
from rrae.toy import toy_setup
from rrae.trainer import evaluate, reconstruct_batch

CFG = ModelConfig(word_dim=6, hidden=12, max_len=8)


@pytest.fixture(scope="module")
def setup():
    table, tr, tu = toy_setup(vocab=12, dim=6, n_train=30, n_tune=10, min_len=1, max_len=5, seed=1)
    return table, tr + tu, init_model(CFG, 3)


def test_curves_agree_with_evaluate(setup):
    table, data, params = setup
    res = evaluate(params, CFG, data, table)
    curves = length_curves(params, CFG, data, table)
    assert [r.length for r in curves] == sorted({len(s) - 1 for s in data})
    assert sum(r.n for r in curves) == len(data)
    assert sum(r.matched_words for r in curves) == res.matched_words
    for r in curves:
        b = res.buckets[r.length]
        assert r.matched_word_rate == b.matched_words / b.words
        assert r.exact_sentence_rate == b.exact_sentences / b.n_sentences
    total_words = sum(r.n * r.length for r in curves)
    assert res.total_words == total_words
    assert curves_from_eval(res) == curves


def test_per_length_recount(setup):
    table, data, params = setup
    outputs = reconstruct_batch(params, CFG, table, data)
    for r in length_curves(params, CFG, data, table):
        pairs = [(s, o) for s, o in zip(data, outputs) if len(s) - 1 == r.length]
        matched = sum(a == b for s, o in pairs for a, b in zip(s[:-1], o[:-1]))
        exact = sum(list(s) == o for s, o in pairs)
        assert (r.n, r.matched_words) == (len(pairs), matched)
        assert r.exact_sentence_rate == exact / len(pairs)


def test_empty_dataset_rejected(setup):
    table, _, params = setup
    with pytest.raises(ValueError):
        length_curves(params, CFG, [], table)


def test_mismatch_positions():
    assert mismatches([1, 2, 3, 9], [1, 5, 3, 4]) == [1, 3]
    assert mismatches([1, 9], [1, 9]) == []


def test_sentence_records_flags(setup):
    table, _, _ = setup
    eos = table.eos_id
    recs = sentence_records([[0, 1, eos]], [[0, 2, eos]], table)
    assert recs[0].mismatch_positions == [1]
    assert recs[0].input_tokens == [table.words[0], table.words[1], "<EOS>"]
    assert recs[0].output_tokens[1] == table.words[2]


def test_sentence_table_is_seeded(setup):
    table, data, params = setup
    a = sentence_table(params, CFG, data, table, n=7, seed=11)
    b = sentence_table(params, CFG, data, table, n=7, seed=11)
    assert a == b and len(a) == 7
    outputs = dict(zip(map(tuple, data), reconstruct_batch(params, CFG, table, data)))
    for r in a:
        assert r.output_ids == outputs[tuple(r.input_ids)]
        assert r.mismatch_positions == mismatches(r.input_ids, r.output_ids)
    with pytest.raises(ValueError):
        sentence_table(params, CFG, data, table, n=len(data) + 1, seed=0)


def test_writers(tmp_path, setup):
    table, data, params = setup
    curves = length_curves(params, CFG, data, table)
    write_curves_csv(curves, tmp_path / "c.csv")
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert list(rows[0]) == ["length", "matched_word_rate", "exact_sentence_rate", "n"]
    assert [int(r["n"]) for r in rows] == [c.n for c in curves]
    assert [float(r["matched_word_rate"]) for r in rows] == [c.matched_word_rate for c in curves]

    recs = sentence_table(params, CFG, data, table, n=5, seed=0)
    write_sentence_tsv(recs, tmp_path / "s.tsv")
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert lines[0] == "input\toutput\tmismatch_positions"
    assert len(lines) == 6
    first = lines[1].split("\t")
    assert first[0] == " ".join(recs[0].input_tokens)
    assert first[2] == ";".join(map(str, recs[0].mismatch_positions))
