import json
import re

import pytest

from zoneprobe.data import (
    AlignmentError,
    Answer,
    Example,
    GeneratorConfig,
    GeneratorError,
    LoadError,
    Vocabulary,
    align_answer,
    classify_question_type,
    dataset_checksum,
    dumps_dataset,
    encode,
    encode_dataset,
    generate_synthetic,
    load_dataset,
    make_batch,
    save_dataset,
    tokenize,
)
from zoneprobe.evaluation import normalize_answer

SMALL = GeneratorConfig(n_train=120, n_dev=40, n_challenge=10,
                        question_types={t: 1.0 for t in ("what", "how", "who", "when", "which", "where", "why")})


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SMALL, seed=3)


def test_tokenize_word_offsets():
    text = "There is a red book, on the Desk."
    toks = tokenize(text)
    assert [t.text for t in toks] == ["there", "is", "a", "red", "book", ",", "on", "the", "desk", "."]
    for t in toks:
        assert text[t.start : t.end].lower() == t.text


def test_tokenize_char_mode_keeps_case_and_skips_space():
    toks = tokenize("Ab 中文", "char")
    assert [t.text for t in toks] == ["A", "b", "中", "文"]
    assert toks[2].start == 3


@pytest.mark.parametrize("q,expected", [
    ("Where is the pen?", "where"),
    ("In what year did it happen?", "what"),
    ("Name the capital.", "other"),
    ("How and why?", "how"),
])
def test_question_type(q, expected):
    assert classify_question_type(q) == expected


def test_align_answer_exact_tokens():
    text = "There is a red book on the desk and a green pen on the chair."
    toks = tokenize(text)
    start = text.index("on the chair")
    s, e = align_answer(toks, start, "on the chair")
    assert [t.text for t in toks[s : e + 1]] == ["on", "the", "chair"]


def test_align_answer_mid_token_expands():
    toks = tokenize("the blackboard is big")
    assert align_answer(toks, 6, "board") == (1, 1)
    with pytest.raises(AlignmentError):
        align_answer(toks, 100, "x")


def _squad(tmp_path, payload, name="dev.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def test_load_rejects_wrong_offset(tmp_path):
    bad = {"data": [{"paragraphs": [{"context": "a red pen", "qas": [
        {"id": "q7", "question": "what?", "answers": [{"text": "pen", "answer_start": 0}]}]}]}]}
    with pytest.raises(LoadError, match="q7"):
        load_dataset(_squad(tmp_path, bad))


def test_load_rejects_malformed_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(LoadError):
        load_dataset(p)


def test_subset_tags_counted(tmp_path):
    payload = {"data": [{"paragraphs": [
        {"context": "the cup is red", "subset": "challenge", "qas": [
            {"id": "a", "question": "what?", "answers": [{"text": "red", "answer_start": 11}]},
            {"id": "b", "question": "which?", "answers": [{"text": "cup", "answer_start": 4}]}]},
        {"context": "the hat is blue", "qas": [
            {"id": "c", "question": "what?", "answers": [{"text": "blue", "answer_start": 11}]}]},
    ]}]}
    exs = load_dataset(_squad(tmp_path, payload))
    assert [e.subset for e in exs] == ["challenge", "challenge", "dev"]


def test_round_trip(tmp_path, small):
    path = tmp_path / "out.json"
    save_dataset(small.dev, path)
    again = load_dataset(path)
    assert again == small.dev
    assert dataset_checksum(again) == dataset_checksum(small.dev)


def test_generator_deterministic():
    a = generate_synthetic(SMALL, seed=9)
    b = generate_synthetic(SMALL, seed=9)
    assert dumps_dataset(a.train + a.dev) == dumps_dataset(b.train + b.dev)
    c = generate_synthetic(SMALL, seed=10)
    assert dumps_dataset(a.train) != dumps_dataset(c.train)


def test_generator_answers_verbatim_and_disjoint(small):
    for ex in small.train + small.dev:
        a = ex.answers[0]
        assert ex.context[a.start : a.start + len(a.text)] == a.text
    train_ctx = {ex.context for ex in small.train}
    assert not train_ctx & {ex.context for ex in small.dev}
    assert sum(ex.subset == "challenge" for ex in small.dev) == 10


def test_generator_covers_types(small):
    types = {ex.question_type for ex in small.train}
    assert types == {"what", "how", "who", "when", "which", "where", "why"}


def test_where_passages_have_two_location_facts():
    ds = generate_synthetic(GeneratorConfig(n_train=200, n_dev=50), seed=1)
    loc_fact = re.compile(r"the \w+ \w+ is (on|under|near|behind|beside) the \w+ \.")
    wheres = [ex for ex in ds.train + ds.dev if ex.question_type == "where"]
    assert wheres
    for ex in wheres:
        assert len(loc_fact.findall(ex.context)) >= 2


def test_generator_facts_in_range(small):
    for ex in small.train:
        n = ex.context.count(" .")
        assert 2 <= n <= 5


def test_generator_lexicon_too_small():
    cfg = GeneratorConfig(objects=["pen", "cup"], colors=["red"], locations=["desk", "bed"],
                          prepositions=["on"], n_train=50, n_dev=10, min_facts=2, max_facts=2,
                          question_types={"where": 1.0})
    with pytest.raises(GeneratorError):
        generate_synthetic(cfg, seed=0)


def test_vocabulary_order_and_fingerprint(small):
    v = Vocabulary.build(small.train)
    assert v.itos[:4] == ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    assert v.ids(["zzz-unknown"]) == [1]
    assert Vocabulary.build(small.train).fingerprint == v.fingerprint


def test_encoding_round_trips_gold(small):
    v = Vocabulary.build(small.train)
    for it in encode_dataset(small.train + small.dev, v, 64).items:
        assert it.answerable
        assert normalize_answer(it.span_text(it.start, it.end)) == normalize_answer(it.example.answers[0].text)


def test_truncated_answer_marked_unanswerable():
    ctx = "a b c d e f g h i j the red pen"
    ex = Example("t", ctx, "what pen ?", [Answer("red pen", ctx.index("red"))])
    v = Vocabulary.build([ex])
    assert not encode(ex, v, 12).answerable
    it = encode(ex, v, 64)
    assert it.span_text(it.start, it.end) == "red pen"


def test_batch_trims_padding(small):
    v = Vocabulary.build(small.train)
    items = encode_dataset(small.train[:5], v, 64).items
    b = make_batch(items)
    assert b.ids.shape[1] == max(it.layout.used_length for it in items)
    assert (b.ids[b.padding] == 0).all()
