"""Datasets in the SQuAD v1.1 JSON schema, a templated synthetic corpus,
tokenisation with character offsets, and encoding into model inputs."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .zones import InputLayout, compute_layout

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)

QUESTION_TYPES = ("what", "how", "who", "when", "which", "where", "why")

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class LoadError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


def tokenize(text: str, mode: str = "word") -> list[Token]:
    """Split ``text`` into tokens that remember their character span.

    ``word`` mode separates runs of word characters from single punctuation
    marks and lowercases; ``char`` mode emits every non-space character as is.
    """
    if mode == "word":
        return [Token(m.group().lower(), m.start(), m.end()) for m in _WORD_RE.finditer(text)]
    if mode == "char":
        return [Token(ch, i, i + 1) for i, ch in enumerate(text) if not ch.isspace()]
    raise ValueError(f"unknown tokenisation mode {mode!r}")


def mode_for_language(language: str) -> str:
    return "char" if language.startswith("chinese") else "word"


def classify_question_type(question: str) -> str:
    for tok in tokenize(question, "word"):
        if tok.text in QUESTION_TYPES:
            return tok.text
    return "other"


# -- examples and the SQuAD schema -------------------------------------------


@dataclass(frozen=True)
class Answer:
    text: str
    start: int


@dataclass
class Example:
    id: str
    context: str
    question: str
    answers: list[Answer]
    subset: str = "dev"
    language: str = "english"

    def __post_init__(self):
        for a in self.answers:
            if self.context[a.start : a.start + len(a.text)] != a.text:
                raise LoadError(
                    f"qa {self.id}: answer {a.text!r} not found at offset {a.start}"
                )

    @property
    def answer_texts(self) -> list[str]:
        return [a.text for a in self.answers]

    @property
    def question_type(self) -> str:
        return classify_question_type(self.question)


def _subset_from_name(path: Path) -> str:
    name = path.stem.lower()
    for tag in ("challenge", "train", "test"):
        if tag in name:
            return tag
    return "dev"


def load_dataset(path: str | Path) -> list[Example]:
    """Read a SQuAD v1.1 style file.

    Subset tags come from a ``subset`` field on the qa, paragraph or article
    (innermost wins), falling back to the file name.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("data"), list):
        raise LoadError(f"{path}: expected an object with a 'data' list")
    default_subset = raw.get("subset", _subset_from_name(path))
    language = raw.get("language", "english")
    out = []
    for article in raw["data"]:
        a_subset = article.get("subset", default_subset)
        for para in article.get("paragraphs", []):
            context = para.get("context")
            p_subset = para.get("subset", a_subset)
            for qa in para.get("qas", []):
                qid = str(qa.get("id", "?"))
                if context is None or "question" not in qa:
                    raise LoadError(f"qa {qid}: missing context or question")
                answers = []
                for ans in qa.get("answers", []):
                    if "answer_start" not in ans or "text" not in ans:
                        raise LoadError(f"qa {qid}: answer without text/answer_start")
                    answers.append(Answer(ans["text"], int(ans["answer_start"])))
                if not answers:
                    raise LoadError(f"qa {qid}: no gold answers")
                out.append(
                    Example(
                        id=qid,
                        context=context,
                        question=qa["question"],
                        answers=answers,
                        subset=qa.get("subset", p_subset),
                        language=language,
                    )
                )
    return out


def dataset_to_dict(examples: Sequence[Example], title: str = "dataset") -> dict:
    """Group examples into the SQuAD nesting, paragraphs in first-seen order."""
    paragraphs: dict[str, list] = {}
    for ex in examples:
        paragraphs.setdefault(ex.context, []).append(
            {
                "id": ex.id,
                "question": ex.question,
                "answers": [{"text": a.text, "answer_start": a.start} for a in ex.answers],
                "subset": ex.subset,
            }
        )
    language = examples[0].language if examples else "english"
    return {
        "version": "1.1",
        "language": language,
        "data": [
            {
                "title": title,
                "paragraphs": [{"context": c, "qas": qas} for c, qas in paragraphs.items()],
            }
        ],
    }


def dumps_dataset(examples: Sequence[Example], title: str = "dataset") -> str:
    return json.dumps(dataset_to_dict(examples, title), ensure_ascii=False, indent=1, sort_keys=True)


def save_dataset(examples: Sequence[Example], path: str | Path, title: str = "dataset") -> None:
    Path(path).write_text(dumps_dataset(examples, title) + "\n", encoding="utf-8")


def dataset_checksum(examples: Sequence[Example]) -> str:
    return hashlib.sha256(dumps_dataset(examples).encode("utf-8")).hexdigest()


# -- synthetic corpus ------------------------------------------------------


@dataclass
class GeneratorConfig:
    objects: list[str] = field(default_factory=lambda: [
        "book", "pen", "cup", "lamp", "key", "phone", "ball", "hat", "box", "bag",
        "clock", "plate", "shoe", "coin", "map", "ring", "card", "bottle", "brush", "knife",
    ])
    colors: list[str] = field(default_factory=lambda: [
        "red", "green", "blue", "black", "white", "yellow", "brown", "pink", "grey", "purple",
    ])
    locations: list[str] = field(default_factory=lambda: [
        "desk", "chair", "table", "bed", "shelf", "floor", "sofa", "box", "window", "door",
        "stove", "piano", "rug", "bench", "counter",
    ])
    prepositions: list[str] = field(default_factory=lambda: ["on", "under", "near", "behind", "beside"])
    persons: list[str] = field(default_factory=lambda: [
        "alice", "bob", "carol", "dave", "erin", "frank", "grace", "henry", "ivy", "jack",
        "kate", "leo", "mia", "nick", "olga", "paul",
    ])
    times: list[str] = field(default_factory=lambda: [
        "on monday", "on tuesday", "on friday", "at noon", "at midnight", "in june",
        "in march", "last week", "this morning", "yesterday",
    ])
    places: list[str] = field(default_factory=lambda: [
        "park", "market", "school", "station", "museum", "library", "bank", "beach",
    ])
    vehicles: list[str] = field(default_factory=lambda: ["bus", "train", "bike", "car", "boat", "taxi"])
    reasons: list[str] = field(default_factory=lambda: [
        "it was raining", "she was tired", "he was late", "the shop closed",
        "the music was loud", "it got dark", "the food ran out",
    ])
    question_types: dict[str, float] = field(
        default_factory=lambda: {"where": 1.0, "who": 1.0, "what": 1.0}
    )
    n_train: int = 2000
    n_dev: int = 500
    n_challenge: int = 0
    min_facts: int = 2
    max_facts: int = 5
    max_attempts_factor: int = 50

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown generator config fields: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# question type -> fact kind that can answer it
_TYPE_KIND = {
    "where": "loc", "what": "loc", "which": "loc",
    "who": "own", "when": "time", "how": "travel", "why": "reason",
}


@dataclass
class SyntheticDataset:
    train: list[Example]
    dev: list[Example]

    @property
    def splits(self) -> dict[str, list[Example]]:
        return {"train": self.train, "dev": self.dev}


class _Passage:
    """Accumulates sentences while tracking character offsets of spans."""

    def __init__(self):
        self.parts: list[str] = []
        self.length = 0

    def add(self, *pieces: str) -> list[int]:
        """Append one sentence; return the char offset of every piece."""
        offsets = []
        if self.parts:
            self.parts.append(" ")
            self.length += 1
        for i, piece in enumerate(pieces):
            if i:
                self.parts.append(" ")
                self.length += 1
            offsets.append(self.length)
            self.parts.append(piece)
            self.length += len(piece)
        return offsets

    @property
    def text(self) -> str:
        return "".join(self.parts)


def _draw(rng: np.random.Generator, pool: Sequence[str], n: int, used: set | None = None) -> list[str]:
    free = [x for x in pool if used is None or x not in used]
    if len(free) < n:
        raise GeneratorError(f"lexicon too small: need {n} distinct items from {len(free)}")
    picked = [free[i] for i in rng.choice(len(free), size=n, replace=False)]
    if used is not None:
        used.update(picked)
    return picked


def _make_facts(rng, cfg: GeneratorConfig, kinds: list[str]):
    """Draw fact contents; objects, persons and locations never repeat in a passage."""
    used_obj, used_person, used_loc = set(), set(), set()
    facts = []
    for kind in kinds:
        if kind == "loc":
            (obj,) = _draw(rng, cfg.objects, 1, used_obj)
            (loc,) = _draw(rng, cfg.locations, 1, used_loc)
            facts.append({
                "kind": kind, "object": obj, "location": loc,
                "color": _draw(rng, cfg.colors, 1)[0],
                "prep": _draw(rng, cfg.prepositions, 1)[0],
            })
        elif kind == "own":
            (obj,) = _draw(rng, cfg.objects, 1, used_obj)
            (person,) = _draw(rng, cfg.persons, 1, used_person)
            facts.append({"kind": kind, "object": obj, "person": person,
                          "color": _draw(rng, cfg.colors, 1)[0]})
        elif kind == "time":
            (person,) = _draw(rng, cfg.persons, 1, used_person)
            facts.append({"kind": kind, "person": person, "time": _draw(rng, cfg.times, 1)[0]})
        elif kind == "travel":
            (person,) = _draw(rng, cfg.persons, 1, used_person)
            facts.append({"kind": kind, "person": person,
                          "place": _draw(rng, cfg.places, 1)[0],
                          "vehicle": _draw(rng, cfg.vehicles, 1)[0]})
        elif kind == "reason":
            (person,) = _draw(rng, cfg.persons, 1, used_person)
            facts.append({"kind": kind, "person": person,
                          "place": _draw(rng, cfg.places, 1)[0],
                          "reason": _draw(rng, cfg.reasons, 1)[0]})
    return facts


def _write_fact(passage: _Passage, f: dict) -> dict[str, tuple[str, int]]:
    """Render a fact; return answerable spans as (text, char offset)."""
    kind = f["kind"]
    if kind == "loc":
        prep_loc = f"{f['prep']} the {f['location']}"
        offs = passage.add("the", f"{f['color']} {f['object']}", "is", prep_loc, ".")
        return {"where": (prep_loc, offs[3]),
                "what": (f"{f['color']} {f['object']}", offs[1]),
                "which": (f["color"], offs[1])}
    if kind == "own":
        offs = passage.add(f["person"], "has the", f"{f['color']} {f['object']}", ".")
        return {"who": (f["person"], offs[0])}
    if kind == "time":
        offs = passage.add(f["person"], "arrived", f["time"], ".")
        return {"when": (f["time"], offs[2])}
    if kind == "travel":
        by = f"by {f['vehicle']}"
        offs = passage.add(f["person"], f"went to the {f['place']}", by, ".")
        return {"how": (by, offs[2])}
    because = f"because {f['reason']}"
    offs = passage.add(f["person"], f"left the {f['place']}", because, ".")
    return {"why": (because, offs[2])}


def _question(qtype: str, f: dict) -> str:
    if qtype == "where":
        return f"where is the {f['object']} ?"
    if qtype == "what":
        return f"what is {f['prep']} the {f['location']} ?"
    if qtype == "which":
        return f"which color is the {f['object']} ?"
    if qtype == "who":
        return f"who has the {f['object']} ?"
    if qtype == "when":
        return f"when did {f['person']} arrive ?"
    if qtype == "how":
        return f"how did {f['person']} go to the {f['place']} ?"
    return f"why did {f['person']} leave the {f['place']} ?"


def _plain_example(rng, cfg: GeneratorConfig, qtype: str, enabled_kinds: list[str]):
    target_kind = _TYPE_KIND[qtype]
    n_facts = int(rng.integers(cfg.min_facts, cfg.max_facts + 1))
    kinds = [target_kind, target_kind] + [
        enabled_kinds[i] for i in rng.integers(0, len(enabled_kinds), size=n_facts - 2)
    ]
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]
    facts = _make_facts(rng, cfg, kinds)
    candidates = [i for i, f in enumerate(facts) if f["kind"] == target_kind]
    target = candidates[int(rng.integers(len(candidates)))]
    passage = _Passage()
    answer = None
    for i, f in enumerate(facts):
        spans = _write_fact(passage, f)
        if i == target:
            answer = spans[qtype]
    return passage.text, _question(qtype, facts[target]), answer


def _challenge_example(rng, cfg: GeneratorConfig):
    """Answer needs two facts: who holds which object, and where that object lies."""
    n_facts = int(rng.integers(max(cfg.min_facts, 4), max(cfg.max_facts, 4) + 1))
    n_pairs = 2
    kinds = ["own"] * n_pairs + ["loc"] * (n_facts - n_pairs)
    facts = _make_facts(rng, cfg, kinds)
    owns = [f for f in facts if f["kind"] == "own"]
    locs = [f for f in facts if f["kind"] == "loc"]
    # owned objects reappear in location facts
    for own, loc in zip(owns, locs):
        loc["object"], loc["color"] = own["object"], own["color"]
    order = [facts[i] for i in rng.permutation(len(facts))]
    target = owns[int(rng.integers(len(owns)))]
    passage = _Passage()
    answer = None
    for f in order:
        spans = _write_fact(passage, f)
        if f["kind"] == "loc" and f["object"] == target["object"]:
            answer = spans["where"]
    question = f"where is the thing that {target['person']} has ?"
    return passage.text, question, answer


def generate_synthetic(cfg: GeneratorConfig | None = None, seed: int = 0) -> SyntheticDataset:
    """Build train and dev splits from templates, deterministic in ``seed``.

    Dev (and the optional challenge subset, tagged ``challenge`` inside the
    dev split) never repeats a train passage verbatim.
    """
    cfg = cfg or GeneratorConfig()
    types = sorted(t for t, w in cfg.question_types.items() if w > 0)
    unknown = set(types) - set(_TYPE_KIND)
    if unknown:
        raise GeneratorError(f"unknown question types {sorted(unknown)}")
    if not types:
        raise GeneratorError("no question types enabled")
    if cfg.min_facts < 2 or cfg.max_facts < cfg.min_facts:
        raise GeneratorError("need 2 <= min_facts <= max_facts")
    weights = np.array([cfg.question_types[t] for t in types], dtype=np.float64)
    weights /= weights.sum()
    enabled_kinds = sorted({_TYPE_KIND[t] for t in types})
    rng = np.random.default_rng(seed)
    seen: set[str] = set()

    def build(n: int, subset: str, challenge: bool, prefix: str) -> list[Example]:
        out: list[Example] = []
        attempts = 0
        while len(out) < n:
            attempts += 1
            if attempts > cfg.max_attempts_factor * max(n, 1):
                raise GeneratorError(
                    f"lexicon too small for {n} distinct {subset} passages (got {len(out)})"
                )
            if challenge:
                context, question, (text, start) = _challenge_example(rng, cfg)
            else:
                qtype = types[int(rng.choice(len(types), p=weights))]
                context, question, (text, start) = _plain_example(rng, cfg, qtype, enabled_kinds)
            if context in seen:
                continue
            seen.add(context)
            out.append(Example(f"{prefix}-{len(out):05d}", context, question, [Answer(text, start)], subset))
        return out

    train = build(cfg.n_train, "train", False, "train")
    dev = build(cfg.n_dev, "dev", False, "dev")
    dev += build(cfg.n_challenge, "challenge", True, "chl")
    return SyntheticDataset(train, dev)


# -- vocabulary and encoding -----------------------------------------------


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        for t in tokens:
            if t not in SPECIALS:
                self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, examples: Iterable[Example], mode: str = "word", min_freq: int = 1) -> "Vocabulary":
        counts: Counter[str] = Counter()
        for ex in examples:
            counts.update(t.text for t in tokenize(ex.question, mode))
            counts.update(t.text for t in tokenize(ex.context, mode))
        kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]


def align_answer(tokens: Sequence[Token], start: int, text: str) -> tuple[int, int]:
    """Smallest token span covering characters ``[start, start + len(text))``."""
    end = start + len(text)
    covering = [i for i, t in enumerate(tokens) if t.end > start and t.start < end]
    if not text or not covering:
        raise AlignmentError(f"answer {text!r} at {start} covers no token")
    return covering[0], covering[-1]


@dataclass
class EncodedExample:
    example: Example
    ids: np.ndarray
    layout: InputLayout
    start: int  # sequence index of the gold start, -1 if truncated away
    end: int
    passage_tokens: list[Token]
    qtype: str

    @property
    def answerable(self) -> bool:
        return self.start >= 0

    def span_text(self, start: int, end: int) -> str:
        """Passage substring covered by sequence positions ``start..end``."""
        offset = self.layout.passage_range[0]
        a = self.passage_tokens[start - offset]
        b = self.passage_tokens[end - offset]
        return self.example.context[a.start : b.end]


def encode(example: Example, vocab: Vocabulary, max_length: int, mode: str | None = None) -> EncodedExample:
    mode = mode or mode_for_language(example.language)
    q_tokens = tokenize(example.question, mode)
    p_tokens = tokenize(example.context, mode)
    layout = compute_layout(len(q_tokens), len(p_tokens), max_length)
    p_tokens = p_tokens[: layout.n_passage]
    ids = np.full(max_length, PAD_ID, dtype=np.int64)
    seq = (
        [CLS_ID]
        + vocab.ids(t.text for t in q_tokens)
        + [SEP_ID]
        + vocab.ids(t.text for t in p_tokens)
        + [SEP_ID]
    )
    ids[: len(seq)] = seq
    if not example.answers:
        return EncodedExample(example, ids, layout, -1, -1, p_tokens, example.question_type)
    gold = example.answers[0]
    all_tokens = tokenize(example.context, mode)
    s, e = align_answer(all_tokens, gold.start, gold.text)
    offset = layout.passage_range[0]
    if e < layout.n_passage:
        start, end = s + offset, e + offset
    else:
        start = end = -1
    return EncodedExample(example, ids, layout, start, end, p_tokens, example.question_type)


def sequence_tokens(item: EncodedExample, mode: str = "word") -> list[str]:
    """Surface tokens of the used positions, special tokens included."""
    question = [t.text for t in tokenize(item.example.question, mode)]
    return [CLS] + question + [SEP] + [t.text for t in item.passage_tokens] + [SEP]


@dataclass
class EncodedDataset:
    items: list[EncodedExample]
    vocab_fingerprint: str
    max_length: int

    def __len__(self) -> int:
        return len(self.items)

    def subset(self, keep: Iterable[int]) -> "EncodedDataset":
        return EncodedDataset([self.items[i] for i in keep], self.vocab_fingerprint, self.max_length)

    def where(self, predicate) -> "EncodedDataset":
        return EncodedDataset([it for it in self.items if predicate(it)], self.vocab_fingerprint, self.max_length)


def encode_dataset(examples: Sequence[Example], vocab: Vocabulary, max_length: int, mode: str | None = None) -> EncodedDataset:
    return EncodedDataset([encode(ex, vocab, max_length, mode) for ex in examples], vocab.fingerprint, max_length)


@dataclass
class Batch:
    ids: np.ndarray  # [B, L]
    segments: np.ndarray  # [B, L]
    padding: np.ndarray  # [B, L] bool
    layouts: list[InputLayout]
    starts: np.ndarray
    ends: np.ndarray


def make_batch(items: Sequence[EncodedExample]) -> Batch:
    """Stack examples, trimming padding to the longest used length in the batch."""
    length = max(it.layout.used_length for it in items)
    layouts = [it.layout.with_length(length) for it in items]
    return Batch(
        ids=np.stack([it.ids[:length] for it in items]),
        segments=np.stack([lay.segment_ids() for lay in layouts]),
        padding=np.stack([lay.padding() for lay in layouts]),
        layouts=layouts,
        starts=np.array([it.start for it in items], dtype=np.int64),
        ends=np.array([it.end for it in items], dtype=np.int64),
    )
