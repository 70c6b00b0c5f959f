"""scikit-learn style wrapper: raw examples in, answer strings out."""

from __future__ import annotations

import numbers
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_scalar

from .data import Example, Vocabulary, encode_dataset
from .evaluation import evaluate, predict_spans
from .model import ModelConfig, TransformerQA
from .train import TrainConfig, train
from .zones import ProbeSpec


def check_examples(X) -> list[Example]:
    """Accept a non-empty sequence of :class:`Example` objects."""
    if isinstance(X, Example):
        raise TypeError("expected a sequence of examples, got a single Example")
    X = list(X)
    if not X:
        raise ValueError("at least one example is required")
    bad = [type(x).__name__ for x in X if not isinstance(x, Example)]
    if bad:
        raise TypeError(f"expected Example objects, got {bad[0]}")
    return X


def check_probe(probe) -> ProbeSpec | None:
    if probe is None or isinstance(probe, ProbeSpec):
        return probe
    if isinstance(probe, (dict, list)):
        return ProbeSpec.from_dict(probe)
    if isinstance(probe, str):
        return ProbeSpec.from_json(probe)
    raise TypeError(f"probe must be a ProbeSpec, dict, list or JSON string, not {type(probe).__name__}")


class SpanQA(BaseEstimator):
    """Span-extraction reader trained from scratch.

    ``fit`` takes :class:`Example` objects whose gold answers carry the
    targets, so ``y`` is accepted only for pipeline compatibility and
    ignored.  ``probe`` may hold train-time and decode-time masks; each is
    applied in its own phase.
    """

    def __init__(
        self,
        n_layers=2,
        n_heads=4,
        d_model=64,
        d_ff=256,
        max_length=64,
        dropout=0.1,
        epochs=10,
        batch_size=32,
        lr=3e-4,
        warmup=0.1,
        seed=11,
        mode="word",
        probe=None,
    ):
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.max_length = max_length
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.seed = seed
        self.mode = mode
        self.probe = probe

    def _validate_params(self):
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "max_length", "epochs", "batch_size"):
            check_scalar(getattr(self, name), name, numbers.Integral, min_val=1)
        check_scalar(self.dropout, "dropout", numbers.Real, min_val=0.0, max_val=1.0, include_boundaries="left")
        check_scalar(self.lr, "lr", numbers.Real, min_val=0.0)
        check_scalar(self.warmup, "warmup", numbers.Real, min_val=0.0, max_val=1.0, include_boundaries="left")
        if self.mode not in ("word", "char"):
            raise ValueError(f"mode must be 'word' or 'char', got {self.mode!r}")
        return check_probe(self.probe)

    def fit(self, X, y=None):
        examples = check_examples(X)
        probe = self._validate_params()
        self.vocab_ = Vocabulary.build(examples, self.mode)
        self.model_config_ = ModelConfig(
            vocab_size=len(self.vocab_),
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            max_length=self.max_length,
            dropout=self.dropout,
        )
        data = encode_dataset(examples, self.vocab_, self.max_length, self.mode)
        cfg = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, warmup=self.warmup, seed=self.seed, probe=probe
        )
        result = train(self.model_config_, data, cfg, self.vocab_, self.mode)
        self.model_ = result.model
        self.loss_curve_ = np.asarray(result.losses)
        self.n_iter_ = len(result.losses)
        return self

    def _encode(self, X):
        check_is_fitted(self, "model_")
        return encode_dataset(check_examples(X), self.vocab_, self.max_length, self.mode)

    def predict(self, X) -> list[str]:
        data = self._encode(X)
        spans = predict_spans(self.model_, data, check_probe(self.probe))
        return [item.span_text(s, e) for item, (s, e) in zip(data.items, spans)]

    def score(self, X, y=None) -> float:
        """Exact match (percent) against the examples' gold answers."""
        data = self._encode(X)
        return evaluate(self.model_, data, check_probe(self.probe)).em

    @classmethod
    def from_model(cls, model: TransformerQA, probe=None) -> "SpanQA":
        """Wrap an already trained model, e.g. one loaded from a checkpoint."""
        if model.vocab is None:
            raise ValueError("model has no vocabulary attached")
        c = model.config
        est = cls(
            n_layers=c.n_layers,
            n_heads=c.n_heads,
            d_model=c.d_model,
            d_ff=c.d_ff,
            max_length=c.max_length,
            dropout=c.dropout,
            mode=model.mode,
            probe=probe,
        )
        est.model_, est.vocab_, est.model_config_ = model, model.vocab, c
        return est

    def predict_records(self, X: Sequence[Example]) -> list[dict]:
        data = self._encode(X)
        return evaluate(self.model_, data, check_probe(self.probe)).records
