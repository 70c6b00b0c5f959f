"""SQuAD-style exact match / F1, probed evaluation of a model, and Pearson r."""

from __future__ import annotations

import csv
import io
import json
import math
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import EncodedDataset, make_batch
from .model import DEFAULT_MAX_ANSWER_LENGTH, TransformerQA, decode_span
from .zones import ProbeSpec

_ARTICLES = re.compile(r"\b(a|an|the)\b", re.UNICODE)
_CJK_PUNCT = "，。！？、；：“”‘’（）《》【】「」『』…—·～"
_PUNCT = set(string.punctuation) | set(_CJK_PUNCT)


class VocabularyMismatch(ValueError):
    pass


class UndefinedCorrelation(ValueError):
    """Pearson r has no value (a constant input); ``reason`` says which."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def normalize_answer(text: str, mode: str = "word") -> str:
    if mode == "char":
        return "".join(ch for ch in text if not ch.isspace() and ch not in _PUNCT)
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    return " ".join(_ARTICLES.sub(" ", text).split())


def _units(text: str, mode: str) -> list[str]:
    norm = normalize_answer(text, mode)
    return list(norm) if mode == "char" else norm.split()


def exact_match(prediction: str, golds: Sequence[str], mode: str = "word") -> int:
    pred = normalize_answer(prediction, mode)
    return int(any(pred == normalize_answer(g, mode) for g in golds))


def _f1_single(prediction: str, gold: str, mode: str) -> float:
    p, g = _units(prediction, mode), _units(gold, mode)
    if not p or not g:
        return float(p == g)
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision, recall = overlap / len(p), overlap / len(g)
    return 2 * precision * recall / (precision + recall)


def f1(prediction: str, golds: Sequence[str], mode: str = "word") -> float:
    """Bag-of-tokens (word mode) or bag-of-characters (char mode) F1, max over golds."""
    if not golds:
        return float(not _units(prediction, mode))
    return max(_f1_single(prediction, g, mode) for g in golds)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d sequences of equal length")
    if len(x) < 2:
        raise ValueError("pearson needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0:
        raise UndefinedCorrelation("first input has zero variance")
    if syy == 0.0:
        raise UndefinedCorrelation("second input has zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass
class MetricReport:
    em: float
    f1: float
    records: list[dict] = field(default_factory=list)
    probe: dict | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)

    def records_csv(self) -> str:
        buf = io.StringIO()
        fields = ["id", "subset", "qtype", "prediction", "em", "f1"]
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.records:
            w.writerow(r)
        return buf.getvalue()


def predict_spans(
    model: TransformerQA,
    data: EncodedDataset,
    probe: ProbeSpec | None = None,
    max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH,
    batch_size: int = 64,
    phase: str = "decode-time",
) -> list[tuple[int, int]]:
    """Decoded (start, end) sequence positions for every item, in order."""
    if model.vocab is not None and data.vocab_fingerprint != model.vocab.fingerprint:
        raise VocabularyMismatch(
            f"dataset encoded with vocabulary {data.vocab_fingerprint}, model uses {model.vocab.fingerprint}"
        )
    if probe:
        probe.validate(model.config.n_layers, model.config.n_heads)
    spans = []
    for lo in range(0, len(data), batch_size):
        items = data.items[lo : lo + batch_size]
        batch = make_batch(items)
        logits, _ = model.forward(batch, probe, phase=phase)
        for b, lay in enumerate(batch.layouts):
            spans.append(decode_span(logits.start.data[b], logits.end.data[b], lay, max_answer_length))
    return spans


def evaluate(
    model: TransformerQA,
    data: EncodedDataset,
    probe: ProbeSpec | None = None,
    max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH,
    batch_size: int = 64,
    seed: int | None = None,
    phase: str = "decode-time",
) -> MetricReport:
    """EM/F1 (percent) of ``model`` on ``data`` with the probe's masks of ``phase`` active.

    Items whose gold answer was truncated away score 0 on both metrics.
    """
    spans = predict_spans(model, data, probe, max_answer_length, batch_size, phase)
    mode = model.mode
    records = []
    for item, (s, e) in zip(data.items, spans):
        pred = item.span_text(s, e)
        golds = item.example.answer_texts
        if item.answerable:
            em_i, f1_i = exact_match(pred, golds, mode), f1(pred, golds, mode)
        else:
            em_i, f1_i = 0, 0.0
        records.append(
            {
                "id": item.example.id,
                "subset": item.example.subset,
                "qtype": item.qtype,
                "prediction": pred,
                "start": int(s),
                "end": int(e),
                "em": em_i,
                "f1": f1_i,
            }
        )
    n = max(len(records), 1)
    em = 100.0 * sum(r["em"] for r in records) / n
    f1_score = 100.0 * sum(r["f1"] for r in records) / n
    return MetricReport(em, f1_score, records, probe.to_dict() if probe else None, seed)
