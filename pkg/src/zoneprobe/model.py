"""BERT-style encoder with a start/end span head.

Every attention head of every layer exposes one injection point: a boolean
overlay that overwrites the selected pre-softmax scores with ``MASK_VALUE``
before padding is added and the row softmax is taken.  A row left without any
live cell gets all-zero weights instead of a uniform spread over masked cells.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Batch, Vocabulary
from .tensor import MASK_VALUE, Tensor
from .zones import InputLayout, ProbeSpec, dynamic_topk_mask, static_mask

MAGIC = b"ZPCK"
FORMAT_VERSION = 1
DEFAULT_MAX_ANSWER_LENGTH = 30


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_length: int = 64
    dropout: float = 0.1
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("vocab_size", "n_layers", "n_heads", "d_model", "d_ff", "max_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown model config fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class AttentionRecord:
    """Per-layer arrays of shape ``[B, heads, L, L]``.

    ``pre`` holds the raw scaled scores, ``masked`` the scores actually fed to
    the softmax (probe overlay and padding applied) and ``post`` the softmax.
    """

    pre: list[np.ndarray] = field(default_factory=list)
    masked: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    overlay: list[np.ndarray | None] = field(default_factory=list)

    def head(self, layer: int, head: int, example: int = 0) -> tuple[np.ndarray, np.ndarray]:
        return self.pre[layer][example, head], self.post[layer][example, head]

    def to_dict(self, example: int = 0) -> dict:
        """JSON-ready nested lists for one example of the batch."""
        return {
            "pre": [a[example].tolist() for a in self.pre],
            "post": [a[example].tolist() for a in self.post],
            "overlay": [None if m is None else m[example].astype(int).tolist() for m in self.overlay],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttentionRecord":
        """Inverse of :meth:`to_dict`; arrays regain a leading batch axis of 1."""
        pre = [np.asarray(a, dtype=np.float64)[None] for a in d["pre"]]
        post = [np.asarray(a, dtype=np.float64)[None] for a in d["post"]]
        overlay = [None if m is None else np.asarray(m, dtype=bool)[None] for m in d.get("overlay", [])]
        return cls(pre=pre, masked=[], post=post, overlay=overlay)


@dataclass
class SpanLogits:
    start: Tensor  # [B, L]
    end: Tensor


def _mask_for_layer(
    specs, layer: int, n_heads: int, layouts: Sequence[InputLayout], scores: np.ndarray, pad_bias: np.ndarray
) -> np.ndarray | None:
    active = [s for s in specs if s.layers is None or layer in s.layers]
    if not active:
        return None
    overlay = np.zeros(scores.shape, dtype=bool)
    post = None
    for spec in active:
        heads = np.array(spec.heads if spec.heads is not None else range(n_heads))
        heads = heads[heads < n_heads]
        if spec.is_dynamic:
            if spec.rank_on == "post" and post is None:
                post = T.softmax_array(scores + pad_bias)
            source = post if spec.rank_on == "post" else scores
            for b, lay in enumerate(layouts):
                overlay[b, heads] |= dynamic_topk_mask(
                    source[b, heads], lay, spec.zone, spec.k, spec.mode, spec.granularity
                )
        else:
            for b, lay in enumerate(layouts):
                overlay[b, heads] |= static_mask(lay, spec)
    return overlay


class TransformerQA:
    """Encoder parameters plus the vocabulary they were trained against."""

    def __init__(self, config: ModelConfig, seed: int = 0, vocab: Vocabulary | None = None, mode: str = "word"):
        self.config = config
        self.vocab = vocab
        self.mode = mode
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        c = config

        def normal(*shape):
            return rng.normal(0.0, c.init_std, size=shape)

        self._add("tok_emb", normal(c.vocab_size, c.d_model))
        self._add("pos_emb", normal(c.max_length, c.d_model))
        self._add("seg_emb", normal(2, c.d_model))
        self._add("emb_ln.g", np.ones(c.d_model))
        self._add("emb_ln.b", np.zeros(c.d_model))
        for i in range(c.n_layers):
            p = f"layer{i}."
            for w in ("q", "k", "v", "o"):
                self._add(p + f"w{w}", normal(c.d_model, c.d_model))
                self._add(p + f"b{w}", np.zeros(c.d_model))
            self._add(p + "ln1.g", np.ones(c.d_model))
            self._add(p + "ln1.b", np.zeros(c.d_model))
            self._add(p + "ff1.w", normal(c.d_model, c.d_ff))
            self._add(p + "ff1.b", np.zeros(c.d_ff))
            self._add(p + "ff2.w", normal(c.d_ff, c.d_model))
            self._add(p + "ff2.b", np.zeros(c.d_model))
            self._add(p + "ln2.g", np.ones(c.d_model))
            self._add(p + "ln2.b", np.zeros(c.d_model))
        self._add("span.start.w", normal(c.d_model, 1))
        self._add("span.start.b", np.zeros(1))
        self._add("span.end.w", normal(c.d_model, 1))
        self._add("span.end.b", np.zeros(1))

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward ---------------------------------------------------------

    def attention(
        self,
        h: Tensor,
        layer: int,
        layouts: Sequence[InputLayout],
        pad_bias: np.ndarray,
        specs=(),
        record: AttentionRecord | None = None,
        overlay: np.ndarray | None = None,
    ) -> Tensor:
        """Multi-head self-attention of one layer over ``h`` of shape [B, L, d].

        ``overlay`` ([B, heads, L, L] bool) is OR-ed with whatever ``specs``
        produce for this layer.
        """
        c, P = self.config, self.params
        p = f"layer{layer}."
        B, L, d = h.shape
        if d != c.d_model:
            raise T.ShapeError(f"hidden size {d} != d_model {c.d_model}")

        def heads(x: Tensor) -> Tensor:
            return T.transpose(T.reshape(x, (B, L, c.n_heads, c.head_dim)), (0, 2, 1, 3))

        q = heads(h @ P[p + "wq"] + P[p + "bq"])
        k = heads(h @ P[p + "wk"] + P[p + "bk"])
        v = heads(h @ P[p + "wv"] + P[p + "bv"])
        scores = T.scale(q @ T.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(c.head_dim))
        mask = _mask_for_layer(specs, layer, c.n_heads, layouts, scores.data, pad_bias)
        if overlay is not None:
            if overlay.shape != scores.shape:
                raise T.ShapeError(f"overlay shape {overlay.shape} != scores {scores.shape}")
            mask = overlay if mask is None else mask | overlay
        masked = scores if mask is None else T.masked_fill(scores, mask, MASK_VALUE)
        masked = masked + pad_bias
        probs = T.row_softmax(masked)
        if mask is not None:
            # a row with no live cell (its token is disabled) attends to nothing
            live = (~mask & (pad_bias == 0.0)).any(axis=-1, keepdims=True)
            if not live.all():
                probs = T.mul(probs, live.astype(np.float64))
        if record is not None:
            record.pre.append(scores.data)
            record.masked.append(masked.data)
            record.post.append(probs.data)
            record.overlay.append(mask)
        ctx = T.reshape(T.transpose(probs @ v, (0, 2, 1, 3)), (B, L, d))
        return ctx @ P[p + "wo"] + P[p + "bo"]

    def forward(
        self,
        batch: Batch,
        probe: ProbeSpec | None = None,
        phase: str = "decode-time",
        record: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[SpanLogits, AttentionRecord | None]:
        """Span logits for ``batch``; masks of ``probe`` tagged ``phase`` are applied.

        Dropout is only active when ``rng`` is given.
        """
        c, P = self.config, self.params
        specs = ()
        if probe:
            probe.validate(c.n_layers, c.n_heads)
            specs = probe.for_phase(phase)
        B, L = batch.ids.shape
        if L > c.max_length:
            raise T.ShapeError(f"sequence length {L} exceeds max_length {c.max_length}")
        rate = c.dropout if rng is not None else 0.0
        pad_bias = np.where(batch.padding, MASK_VALUE, 0.0)[:, None, None, :]
        x = (
            T.embedding(P["tok_emb"], batch.ids)
            + T.embedding(P["pos_emb"], np.arange(L))
            + T.embedding(P["seg_emb"], batch.segments)
        )
        h = T.dropout(T.layer_norm(x, P["emb_ln.g"], P["emb_ln.b"]), rate, rng)
        rec = AttentionRecord() if record else None
        for i in range(c.n_layers):
            p = f"layer{i}."
            a = self.attention(h, i, batch.layouts, pad_bias, specs, rec)
            h = T.layer_norm(h + T.dropout(a, rate, rng), P[p + "ln1.g"], P[p + "ln1.b"])
            f = T.gelu(h @ P[p + "ff1.w"] + P[p + "ff1.b"]) @ P[p + "ff2.w"] + P[p + "ff2.b"]
            h = T.layer_norm(h + T.dropout(f, rate, rng), P[p + "ln2.g"], P[p + "ln2.b"])
        start = T.reshape(h @ P["span.start.w"] + P["span.start.b"], (B, L))
        end = T.reshape(h @ P["span.end.w"] + P["span.end.b"], (B, L))
        return SpanLogits(start, end), rec

    # -- persistence -----------------------------------------------------

    def to_bytes(self) -> bytes:
        """Little-endian container: magic, version, JSON header, named float64 tensors."""
        header = json.dumps(
            {
                "config": self.config.to_dict(),
                "mode": self.mode,
                "vocab": self.vocab.itos if self.vocab is not None else None,
            },
            sort_keys=True,
            ensure_ascii=False,
        ).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        buf.write(header)
        buf.write(struct.pack("<I", len(self.params)))
        for name, t in self.params.items():
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", t.data.ndim))
            buf.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TransformerQA":
        view = memoryview(blob)
        if bytes(view[:4]) != MAGIC:
            raise ValueError("not a checkpoint (bad magic)")
        version, hlen = struct.unpack_from("<II", view, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        pos = 12
        header = json.loads(bytes(view[pos : pos + hlen]).decode("utf-8"))
        pos += hlen
        vocab = Vocabulary(header["vocab"][4:]) if header.get("vocab") else None
        model = cls(ModelConfig.from_dict(header["config"]), vocab=vocab, mode=header.get("mode", "word"))
        (count,) = struct.unpack_from("<I", view, pos)
        pos += 4
        seen = set()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos : pos + nlen]).decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(view, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
            if name not in model.params or model.params[name].shape != data.shape:
                raise ValueError(f"checkpoint tensor {name!r} {shape} does not fit the config")
            model.params[name].data = data
            seen.add(name)
        missing = set(model.params) - seen
        if missing:
            raise ValueError(f"checkpoint lacks tensors {sorted(missing)}")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "TransformerQA":
        return cls.from_bytes(Path(path).read_bytes())

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def span_loss(logits: SpanLogits, starts: np.ndarray, ends: np.ndarray, padding: np.ndarray) -> Tensor:
    """Mean of start and end cross-entropy over the non-padding positions."""
    valid = ~np.asarray(padding, dtype=bool)
    ls = T.cross_entropy(logits.start, starts, valid)
    le = T.cross_entropy(logits.end, ends, valid)
    return T.scale(ls + le, 0.5)


def decode_span(
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    layout: InputLayout,
    max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH,
) -> tuple[int, int]:
    """Best passage span by start+end logit with ``start <= end`` and bounded length.

    Ties resolve to the earliest start, then the shortest span.
    """
    if max_answer_length < 1:
        raise ValueError("max_answer_length must be >= 1")
    lo, hi = layout.passage_range
    s = np.asarray(start_logits, dtype=np.float64)[lo : hi + 1]
    e = np.asarray(end_logits, dtype=np.float64)[lo : hi + 1]
    n = len(s)
    i, j = np.indices((n, n))
    valid = (j >= i) & (j - i < max_answer_length)
    score = np.where(valid, s[:, None] + e[None, :], -np.inf)
    best = int(np.argmax(score))
    return lo + best // n, lo + best % n
