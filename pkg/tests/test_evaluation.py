
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from golden import em_f1_cases, pearson_cases, value
from zoneprobe.data import Answer, Example, Vocabulary, encode_dataset, generate_synthetic, GeneratorConfig
from zoneprobe.evaluation import (
    MetricReport,
    UndefinedCorrelation,
    VocabularyMismatch,
    evaluate,
    exact_match,
    f1,
    normalize_answer,
    pearson,
)
from zoneprobe.model import ModelConfig, TransformerQA

EM_CASES = em_f1_cases()
R_CASES = pearson_cases()


def test_golden_file_sizes():
    assert len(EM_CASES) == 20 and len(R_CASES) == 10


@pytest.mark.parametrize("case", EM_CASES, ids=[f"{c['mode']}:{c['pred']!r}" for c in EM_CASES])
def test_em_f1_golden(case):
    assert exact_match(case["pred"], case["golds"], case["mode"]) == case["em"]
    assert f1(case["pred"], case["golds"], case["mode"]) == pytest.approx(value(case["f1"]), abs=1e-12)


@pytest.mark.parametrize("case", R_CASES, ids=[c["r"] for c in R_CASES])
def test_pearson_golden(case):
    assert abs(pearson(case["x"], case["y"]) - value(case["r"])) <= 1e-12


def test_pearson_undefined_when_constant():
    with pytest.raises(UndefinedCorrelation) as err:
        pearson([1, 2, 3], [5, 5, 5])
    assert "second" in err.value.reason
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=3, max_size=30))
def test_pearson_matches_numpy(pairs):
    x, y = map(np.array, zip(*pairs))
    if np.ptp(x) < 1e-3 or np.ptp(y) < 1e-3:
        return
    assert pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-9)
    assert -1.0 <= pearson(x, y) <= 1.0


def test_normalize_modes():
    assert normalize_answer("The  Red, Pen!") == "red pen"
    assert normalize_answer("The Pen", "char") == "ThePen"


@pytest.fixture(scope="module")
def tiny():
    ds = generate_synthetic(GeneratorConfig(n_train=30, n_dev=12), seed=2)
    vocab = Vocabulary.build(ds.train + ds.dev)
    model = TransformerQA(ModelConfig(len(vocab), n_layers=1, n_heads=2, d_model=8, d_ff=16), seed=0, vocab=vocab)
    return model, vocab, encode_dataset(ds.dev, vocab, 64)


def test_report_is_mean_of_records(tiny):
    model, _, dev = tiny
    rep = evaluate(model, dev)
    assert rep.n == len(dev)
    assert rep.em == pytest.approx(100 * np.mean([r["em"] for r in rep.records]))
    assert rep.f1 == pytest.approx(100 * np.mean([r["f1"] for r in rep.records]))
    assert MetricReport.from_dict(rep.to_dict()) == rep
    assert rep.records_csv().splitlines()[0] == "id,subset,qtype,prediction,em,f1"


def test_unanswerable_scores_zero(tiny):
    model, vocab, _ = tiny
    ctx = " ".join(["x"] * 70) + " the red pen"
    ex = Example("u", ctx, "what pen ?", [Answer("red pen", ctx.index("red"))])
    data = encode_dataset([ex], vocab, 64)
    rep = evaluate(model, data)
    assert rep.em == 0 and rep.f1 == 0 and rep.n == 1


def test_vocabulary_mismatch(tiny):
    model, _, _ = tiny
    other = Vocabulary(["zzz"])
    ex = Example("v", "a b", "a ?", [Answer("b", 2)])
    with pytest.raises(VocabularyMismatch):
        evaluate(model, encode_dataset([ex], other, 16))
