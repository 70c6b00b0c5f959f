"""Input geometry of ``[CLS] question [SEP] passage [SEP]`` sequences and the
attention masks built on top of it.

Every mask here is a boolean matrix where ``True`` marks an attention cell to
disable.  Disabling means overwriting the pre-softmax score with
:data:`~zoneprobe.tensor.MASK_VALUE`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Iterable

import numpy as np

from .tensor import MASK_VALUE


class LayoutError(ValueError):
    pass


class Zone(str, Enum):
    Q2 = "Q2"
    Q2P = "Q2P"
    P2Q = "P2Q"
    P2 = "P2"
    ALL = "All"

    @classmethod
    def parse(cls, value: "str | Zone") -> "Zone":
        if isinstance(value, Zone):
            return value
        for z in cls:
            if value in (z.value, z.name) or value.lower() == z.value.lower():
                return z
        aliases = {"Q²": cls.Q2, "P²": cls.P2}
        if value in aliases:
            return aliases[value]
        raise ValueError(f"unknown zone {value!r}")


FOUR_ZONES = (Zone.Q2, Zone.Q2P, Zone.P2Q, Zone.P2)
SWEEP_ZONES = FOUR_ZONES + (Zone.ALL,)


@dataclass(frozen=True)
class InputLayout:
    """Index geometry of one encoded example.

    Positions: ``0`` is [CLS], question occupies ``1..n_question``, then the
    middle [SEP], the passage, the closing [SEP], and padding up to ``length``.
    """

    n_question: int
    n_passage: int
    length: int

    def __post_init__(self):
        if self.n_question < 1 or self.n_passage < 1:
            raise LayoutError("question and passage need at least one token each")
        if self.used_length > self.length:
            raise LayoutError(f"layout needs {self.used_length} positions, only {self.length} available")

    cls_index = 0

    @property
    def used_length(self) -> int:
        return 3 + self.n_question + self.n_passage

    @property
    def question_range(self) -> tuple[int, int]:
        return 1, self.n_question

    @property
    def mid_sep_index(self) -> int:
        return self.n_question + 1

    @property
    def passage_range(self) -> tuple[int, int]:
        start = self.n_question + 2
        return start, start + self.n_passage - 1

    @property
    def end_sep_index(self) -> int:
        return self.used_length - 1

    @property
    def pad_range(self) -> tuple[int, int] | None:
        if self.used_length == self.length:
            return None
        return self.used_length, self.length - 1

    @property
    def special_indices(self) -> tuple[int, int, int]:
        return self.cls_index, self.mid_sep_index, self.end_sep_index

    def question_indices(self) -> np.ndarray:
        return np.arange(1, self.n_question + 1)

    def passage_indices(self) -> np.ndarray:
        lo, hi = self.passage_range
        return np.arange(lo, hi + 1)

    def zone_indices(self, zone: Zone) -> tuple[np.ndarray, np.ndarray]:
        """(row indices, column indices) spanned by ``zone``."""
        q, p = self.question_indices(), self.passage_indices()
        if zone is Zone.Q2:
            return q, q
        if zone is Zone.Q2P:
            return q, p
        if zone is Zone.P2Q:
            return p, q
        if zone is Zone.P2:
            return p, p
        both = np.concatenate([q, p])
        return both, both

    def with_length(self, length: int) -> "InputLayout":
        return replace(self, length=length)

    def segment_ids(self) -> np.ndarray:
        seg = np.zeros(self.length, dtype=np.int64)
        seg[self.n_question + 2 : self.used_length] = 1
        return seg

    def padding(self) -> np.ndarray:
        pad = np.zeros(self.length, dtype=bool)
        pad[self.used_length :] = True
        return pad


def compute_layout(n_question: int, n_passage: int, max_length: int) -> InputLayout:
    """Place question and passage, truncating the passage to fit ``max_length``."""
    if n_question < 1 or n_passage < 1:
        raise LayoutError("question and passage need at least one token each")
    room = max_length - 3 - n_question
    if room < 1:
        raise LayoutError(
            f"question of {n_question} tokens leaves no passage room within max_length={max_length}"
        )
    return InputLayout(n_question, min(n_passage, room), max_length)


# -- mask descriptions -----------------------------------------------------

KINDS = ("zone", "special-token", "diagonal", "topk", "full")
SPECIAL_TOKENS = ("cls", "mid-sep", "end-sep", "all-special")
TOPK_MODES = ("cumulative", "kth-only")
GRANULARITIES = ("per-row", "per-zone")
PHASES = ("train-time", "decode-time")


def _selector(value) -> tuple[int, ...] | None:
    if value is None or value == "all":
        return None
    if isinstance(value, (int, np.integer)):
        return (int(value),)
    return tuple(sorted({int(v) for v in value}))


@dataclass(frozen=True)
class MaskSpec:
    """Which attention cells to disable, in which layers and heads, and when.

    ``layers``/``heads`` of ``None`` select everything.  ``rank_on`` chooses
    the map used to rank cells for top-k masks (``"pre"`` or ``"post"``
    softmax); it only matters for per-zone granularity because softmax keeps
    the order within a row.
    """

    kind: str
    zone: Zone | None = None
    token: str | None = None
    k: int | None = None
    mode: str = "cumulative"
    granularity: str = "per-row"
    rank_on: str = "pre"
    layers: tuple[int, ...] | None = None
    heads: tuple[int, ...] | None = None
    phase: str = "decode-time"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.zone is not None and not isinstance(self.zone, Zone):
            object.__setattr__(self, "zone", Zone.parse(self.zone))
        object.__setattr__(self, "layers", _selector(self.layers))
        object.__setattr__(self, "heads", _selector(self.heads))
        if self.kind in ("zone", "topk") and self.zone is None:
            raise ValueError(f"{self.kind} mask needs a zone")
        if self.kind == "special-token" and self.token not in SPECIAL_TOKENS:
            raise ValueError(f"special-token mask needs token in {SPECIAL_TOKENS}, got {self.token!r}")
        if self.kind == "topk":
            if self.k is None or self.k < 1:
                raise ValueError("topk mask requires k >= 1")
            if self.mode not in TOPK_MODES:
                raise ValueError(f"mode must be one of {TOPK_MODES}")
            if self.granularity not in GRANULARITIES:
                raise ValueError(f"granularity must be one of {GRANULARITIES}")
            if self.rank_on not in ("pre", "post"):
                raise ValueError("rank_on must be 'pre' or 'post'")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")

    @property
    def is_dynamic(self) -> bool:
        return self.kind == "topk"

    def selects(self, layer: int, head: int) -> bool:
        return (self.layers is None or layer in self.layers) and (
            self.heads is None or head in self.heads
        )

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.zone is not None:
            d["zone"] = self.zone.value
        if self.token is not None:
            d["token"] = self.token
        if self.kind == "topk":
            d.update(k=self.k, mode=self.mode, granularity=self.granularity, rank_on=self.rank_on)
        d["layers"] = "all" if self.layers is None else list(self.layers)
        d["heads"] = "all" if self.heads is None else list(self.heads)
        d["phase"] = self.phase
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MaskSpec":
        known = {"kind", "zone", "token", "k", "mode", "granularity", "rank_on", "layers", "heads", "phase"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown MaskSpec fields: {sorted(extra)}")
        if "kind" not in d:
            raise ValueError("MaskSpec.kind is required")
        return cls(**d)


@dataclass(frozen=True)
class ProbeSpec:
    """A set of masks; train-time entries act while fitting, decode-time ones at evaluation."""

    masks: tuple[MaskSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))

    def __bool__(self) -> bool:
        return bool(self.masks)

    def for_phase(self, phase: str) -> tuple[MaskSpec, ...]:
        return tuple(m for m in self.masks if m.phase == phase)

    def as_phase(self, phase: str) -> "ProbeSpec":
        return ProbeSpec(tuple(replace(m, phase=phase) for m in self.masks))

    def validate(self, n_layers: int, n_heads: int) -> None:
        for m in self.masks:
            for layer in m.layers or ():
                if not 0 <= layer < n_layers:
                    raise ValueError(f"mask {m.to_dict()} selects layer {layer}; model has {n_layers}")
            for head in m.heads or ():
                if not 0 <= head < n_heads:
                    raise ValueError(f"mask {m.to_dict()} selects head {head}; model has {n_heads}")

    def to_dict(self) -> dict:
        return {"masks": [m.to_dict() for m in self.masks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "ProbeSpec":
        items = d.get("masks", []) if isinstance(d, dict) else d
        return cls(tuple(MaskSpec.from_dict(m) for m in items))

    @classmethod
    def from_json(cls, text: str) -> "ProbeSpec":
        return cls.from_dict(json.loads(text))


def zone_mask(zone, **kw) -> MaskSpec:
    return MaskSpec(kind="zone", zone=Zone.parse(zone), **kw)


def special_mask(token: str, **kw) -> MaskSpec:
    return MaskSpec(kind="special-token", token=token, **kw)


def topk_mask(zone, k: int, mode: str = "cumulative", **kw) -> MaskSpec:
    return MaskSpec(kind="topk", zone=Zone.parse(zone), k=k, mode=mode, **kw)


# -- materialisation -------------------------------------------------------


def static_mask(layout: InputLayout, spec: MaskSpec) -> np.ndarray:
    """Boolean ``[length, length]`` matrix of cells disabled by a static spec."""
    return _static_mask_cached(layout, spec).copy()


@lru_cache(maxsize=4096)
def _static_mask_cached(layout: InputLayout, spec: MaskSpec) -> np.ndarray:
    n, used = layout.length, layout.used_length
    mask = np.zeros((n, n), dtype=bool)
    if spec.kind == "zone":
        zones = FOUR_ZONES if spec.zone is Zone.ALL else (spec.zone,)
        for z in zones:
            rows, cols = layout.zone_indices(z)
            mask[np.ix_(rows, cols)] = True
    elif spec.kind == "special-token":
        which = {
            "cls": (layout.cls_index,),
            "mid-sep": (layout.mid_sep_index,),
            "end-sep": (layout.end_sep_index,),
            "all-special": layout.special_indices,
        }[spec.token]
        for i in which:
            mask[i, :used] = True
            mask[:used, i] = True
    elif spec.kind == "diagonal":
        idx = np.arange(used)
        mask[idx, idx] = True
    elif spec.kind == "full":
        mask[:used, :used] = True
    else:
        raise ValueError(f"{spec.kind!r} masks depend on attention scores; use dynamic_topk_mask")
    mask.setflags(write=False)
    return mask


def dynamic_topk_mask(
    scores: np.ndarray,
    layout: InputLayout,
    zone: Zone,
    k: int,
    mode: str = "cumulative",
    granularity: str = "per-row",
) -> np.ndarray:
    """Mark the top-``k`` (or only the ``k``-th) cells of ``zone`` in ``scores``.

    ``scores`` has shape ``(..., L, L)``; leading axes (heads) are ranked
    independently.  Ties go to the lower column index, then the lower row.
    ``k`` larger than a unit is clamped to the unit size.
    """
    zone = Zone.parse(zone)
    if k < 1:
        raise ValueError("k must be >= 1")
    if mode not in TOPK_MODES:
        raise ValueError(f"mode must be one of {TOPK_MODES}")
    rows, cols = layout.zone_indices(zone)
    nr, nc = len(rows), len(cols)
    sub = scores[..., rows[:, None], cols[None, :]]
    lead = sub.shape[:-2]
    if granularity == "per-row":
        order = np.argsort(-sub, axis=-1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.broadcast_to(np.arange(nc), order.shape), axis=-1)
        kk = min(k, nc)
    elif granularity == "per-zone":
        # column-major flattening makes a stable sort break ties by (column, row)
        flat = np.swapaxes(sub, -1, -2).reshape(lead + (nr * nc,))
        order = np.argsort(-flat, axis=-1, kind="stable")
        flat_ranks = np.empty_like(order)
        np.put_along_axis(flat_ranks, order, np.broadcast_to(np.arange(nr * nc), order.shape), axis=-1)
        ranks = np.swapaxes(flat_ranks.reshape(lead + (nc, nr)), -1, -2)
        kk = min(k, nr * nc)
    else:
        raise ValueError(f"granularity must be one of {GRANULARITIES}")
    picked = ranks < kk if mode == "cumulative" else ranks == kk - 1
    mask = np.zeros(scores.shape, dtype=bool)
    mask[..., rows[:, None], cols[None, :]] = picked
    return mask


def apply_mask(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Overwrite masked cells with :data:`MASK_VALUE`; other cells untouched."""
    if np.shape(mask) != np.shape(scores):
        mask = np.broadcast_to(mask, np.shape(scores))
    return np.where(mask, MASK_VALUE, scores)


# -- partition check -------------------------------------------------------


@dataclass
class PartitionReport:
    zone_cells: int
    special_cells: int
    total_cells: int
    overlapping_cells: int
    uncovered_cells: int
    rows_fully_masked: dict[str, int]

    @property
    def ok(self) -> bool:
        return (
            self.overlapping_cells == 0
            and self.uncovered_cells == 0
            and self.zone_cells + self.special_cells == self.total_cells
            and not any(self.rows_fully_masked.values())
        )


def validate_partition(layout: InputLayout) -> PartitionReport:
    """Check that the four zones and the special-token rows/columns tile the
    used square exactly, and that no zone mask empties an attention row."""
    used = layout.used_length
    counts = np.zeros((layout.length, layout.length), dtype=np.int64)
    for z in FOUR_ZONES:
        counts += static_mask(layout, zone_mask(z))
    zone_cells = int(counts.sum())
    special = static_mask(layout, special_mask("all-special"))
    counts += special
    overlap = int((counts[:used, :used] > 1).sum())
    uncovered = int((counts[:used, :used] == 0).sum())
    emptied = {}
    for z in SWEEP_ZONES:
        m = static_mask(layout, zone_mask(z))[:used, :used]
        emptied[z.value] = int(m.all(axis=1).sum())
    return PartitionReport(
        zone_cells=zone_cells,
        special_cells=int(special.sum()),
        total_cells=used * used,
        overlapping_cells=overlap,
        uncovered_cells=uncovered,
        rows_fully_masked=emptied,
    )


def combined_static_mask(layout: InputLayout, specs: Iterable[MaskSpec]) -> np.ndarray | None:
    out = None
    for s in specs:
        m = static_mask(layout, s)
        out = m if out is None else out | m
    return out
