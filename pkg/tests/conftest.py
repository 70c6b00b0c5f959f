import numpy as np
import pytest

from zoneprobe.data import GeneratorConfig, Vocabulary, encode_dataset, generate_synthetic
from zoneprobe.model import ModelConfig
from zoneprobe.train import TrainConfig, train

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance():
    """Record one criterion outcome; the summary prints a PASS/FAIL line per criterion."""

    def record(number: int, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


# -- a small corpus and model shared by the unit tests -------------------------

TINY_GEN = dict(n_train=120, n_dev=40, n_challenge=8)
TINY_MODEL = dict(n_layers=2, n_heads=2, d_model=16, d_ff=32, max_length=64, dropout=0.0)


@pytest.fixture(scope="session")
def tiny_corpus():
    ds = generate_synthetic(GeneratorConfig(**TINY_GEN), seed=3)
    vocab = Vocabulary.build(ds.train)
    return (
        vocab,
        encode_dataset(ds.train, vocab, TINY_MODEL["max_length"]),
        encode_dataset(ds.dev, vocab, TINY_MODEL["max_length"]),
    )


@pytest.fixture(scope="session")
def tiny_config(tiny_corpus):
    vocab = tiny_corpus[0]
    return ModelConfig(vocab_size=len(vocab), **TINY_MODEL)


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus, tiny_config):
    vocab, tr, _ = tiny_corpus
    return train(tiny_config, tr, TrainConfig(epochs=3, batch_size=8, lr=3e-3, seed=5), vocab).model
