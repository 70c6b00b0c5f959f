"""Experiment suites: train-time ablation, decode-time removal, rank
correlation, and layer/head/question-type/subset sweeps against a baseline."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from .data import QUESTION_TYPES, EncodedDataset, Vocabulary
from .evaluation import UndefinedCorrelation, evaluate, pearson
from .model import ModelConfig, TransformerQA
from .train import DEFAULT_SEEDS, TrainConfig, train
from .zones import (
    FOUR_ZONES,
    SWEEP_ZONES,
    MaskSpec,
    ProbeSpec,
    Zone,
    special_mask,
    topk_mask,
    zone_mask,
)

LOW_CONFIDENCE_COUNT = 20


def zone_probe(zone, layers=None, heads=None, phase: str = "decode-time") -> ProbeSpec:
    return ProbeSpec((zone_mask(zone, layers=layers, heads=heads, phase=phase),))


def _run_cells(model, data, probes: Sequence[ProbeSpec | None], jobs: int = 1) -> list[float]:
    """EM for each probe; cells are independent so order and parallelism do not matter."""
    if jobs == 1 or len(probes) < 2:
        return [evaluate(model, data, p).em for p in probes]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs)(delayed(_cell_em)(model, data, p) for p in probes)


def _cell_em(model, data, probe) -> float:
    return evaluate(model, data, probe).em


@dataclass
class DeltaMatrix:
    """EM(masked) - EM(baseline) for zones (rows) x layers or heads (columns)."""

    rows: list[str]
    columns: list[str]
    cells: list[list[float]]
    baseline_em: float
    axis: str
    n_examples: int
    control: float = 0.0
    seeds: list[int] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.columns)

    def cell(self, row: str, column: str) -> float:
        return self.cells[self.rows.index(row)][self.columns.index(column)]

    def mean_abs(self, row: str | None = None) -> float:
        vals = [abs(v) for r, line in zip(self.rows, self.cells) if row in (None, r) for v in line]
        return statistics.fmean(vals) if vals else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeltaMatrix":
        return cls(**d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["zone"] + self.columns)
        for r, line in zip(self.rows, self.cells):
            w.writerow([r] + [repr(float(v)) for v in line])
        return buf.getvalue()


def _sweep(model, data, axis: str, zones=SWEEP_ZONES, jobs: int = 1, baseline: float | None = None) -> DeltaMatrix:
    c = model.config
    n = c.n_layers if axis == "layer" else c.n_heads
    if baseline is None:
        baseline = evaluate(model, data).em
    probes = []
    for z in zones:
        for i in range(n):
            probes.append(zone_probe(z, layers=[i]) if axis == "layer" else zone_probe(z, heads=[i]))
    probes.append(ProbeSpec())  # control: nothing masked
    ems = _run_cells(model, data, probes, jobs)
    control = ems.pop() - baseline
    cells = [[ems[r * n + i] - baseline for i in range(n)] for r in range(len(zones))]
    prefix = "L" if axis == "layer" else "H"
    return DeltaMatrix(
        rows=[Zone.parse(z).value for z in zones],
        columns=[f"{prefix}{i}" for i in range(n)],
        cells=cells,
        baseline_em=baseline,
        axis=axis,
        n_examples=len(data),
        control=control,
    )


def layer_sweep(model: TransformerQA, data: EncodedDataset, jobs: int = 1, baseline: float | None = None) -> DeltaMatrix:
    """Mask each zone in all heads of one layer at a time."""
    m = _sweep(model, data, "layer", jobs=jobs, baseline=baseline)
    deltas = [abs(m.cell(Zone.ALL.value, col)) for col in m.columns]
    m.extra["final_layer_all_smallest"] = deltas[-1] == min(deltas)
    return m


def head_sweep(model: TransformerQA, data: EncodedDataset, jobs: int = 1, baseline: float | None = None) -> DeltaMatrix:
    """Mask each zone in one head index across every layer; also the all-heads joint mask."""
    m = _sweep(model, data, "head", jobs=jobs, baseline=baseline)
    joint = _run_cells(model, data, [zone_probe(z) for z in SWEEP_ZONES], jobs)
    m.extra["joint"] = {z.value: em - m.baseline_em for z, em in zip(SWEEP_ZONES, joint)}
    return m


# -- decode-time removal ------------------------------------------------------


@dataclass
class RemovalTable:
    baseline_em: float
    k: int
    rows: dict[str, dict[str, float]]  # zone -> {"all": EM, "top-k": EM}

    def to_dict(self) -> dict:
        return asdict(self)


def decode_time_removal(model: TransformerQA, data: EncodedDataset, k: int = 10, jobs: int = 1) -> RemovalTable:
    """EM with each zone removed entirely, and with its top-``k`` cells per row removed."""
    probes = []
    for z in SWEEP_ZONES:
        probes.append(zone_probe(z))
        probes.append(ProbeSpec((topk_mask(z, k),)))
    ems = _run_cells(model, data, [None] + probes, jobs)
    baseline = ems.pop(0)
    rows = {z.value: {"all": ems[2 * i], "top-k": ems[2 * i + 1]} for i, z in enumerate(SWEEP_ZONES)}
    return RemovalTable(baseline, k, rows)


# -- rank correlation -------------------------------------------------------


@dataclass
class RankCorrelation:
    ks: list[int]
    em: dict[str, list[float]]
    r: dict[str, float | None]
    reason: dict[str, str]
    baseline_em: float
    granularity: str = "per-row"

    def to_dict(self) -> dict:
        return asdict(self)


def rank_correlation(
    model: TransformerQA,
    data: EncodedDataset,
    kmax: int = 10,
    granularity: str = "per-row",
    rank_on: str = "pre",
    jobs: int = 1,
) -> RankCorrelation:
    """Pearson r between rank k and EM when only the k-th ranked cell is masked."""
    if kmax < 2:
        raise ValueError("rank correlation needs at least two ranks")
    ks = list(range(1, kmax + 1))
    probes = [
        ProbeSpec((topk_mask(z, k, mode="kth-only", granularity=granularity, rank_on=rank_on),))
        for z in FOUR_ZONES
        for k in ks
    ]
    ems = _run_cells(model, data, [None] + probes, jobs)
    baseline = ems.pop(0)
    em_by_zone, r, reason = {}, {}, {}
    for i, z in enumerate(FOUR_ZONES):
        series = ems[i * kmax : (i + 1) * kmax]
        em_by_zone[z.value] = series
        try:
            r[z.value] = pearson(ks, series)
        except UndefinedCorrelation as exc:
            r[z.value] = None
            reason[z.value] = f"undefined: EM {exc.reason.replace('second input', 'across ranks')}"
    return RankCorrelation(ks, em_by_zone, r, reason, baseline, granularity)


def aggregate_correlations(results: Sequence[RankCorrelation]) -> dict[str, dict]:
    """Mean and sample std of r per zone over seeds, skipping undefined values."""
    out = {}
    for z in FOUR_ZONES:
        vals = [res.r[z.value] for res in results if res.r[z.value] is not None]
        out[z.value] = {
            "mean": statistics.fmean(vals) if vals else None,
            "std": statistics.stdev(vals) if len(vals) > 1 else (0.0 if vals else None),
            "defined": len(vals),
            "undefined": len(results) - len(vals),
        }
    return out


# -- train-time ablation ----------------------------------------------------

ABLATION_ROWS: dict[str, tuple[MaskSpec, ...]] = {
    "baseline": (),
    "no-cls": (special_mask("cls", phase="train-time"),),
    "no-mid-sep": (special_mask("mid-sep", phase="train-time"),),
    "no-end-sep": (special_mask("end-sep", phase="train-time"),),
    "no-all-special": (special_mask("all-special", phase="train-time"),),
    "no-diagonal": (MaskSpec(kind="diagonal", phase="train-time"),),
    "no-Q2": (zone_mask(Zone.Q2, phase="train-time"),),
    "no-Q2P": (zone_mask(Zone.Q2P, phase="train-time"),),
    "no-P2Q": (zone_mask(Zone.P2Q, phase="train-time"),),
    "no-P2": (zone_mask(Zone.P2, phase="train-time"),),
}


@dataclass
class AblationRow:
    name: str
    probe: dict
    em: list[float]
    f1: list[float]

    @property
    def em_mean(self) -> float:
        return statistics.fmean(self.em)

    @property
    def f1_mean(self) -> float:
        return statistics.fmean(self.f1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(
            em_mean=self.em_mean,
            f1_mean=self.f1_mean,
            em_std=statistics.stdev(self.em) if len(self.em) > 1 else 0.0,
            f1_std=statistics.stdev(self.f1) if len(self.f1) > 1 else 0.0,
        )
        return d


def train_time_zone_ablation(
    train_data: EncodedDataset,
    eval_data: EncodedDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    vocab: Vocabulary | None = None,
    mode: str = "word",
    rows: Sequence[str] | None = None,
    mask_free_eval: bool = False,
) -> list[AblationRow]:
    """Retrain once per (row, seed) with the row's mask active while training.

    Evaluation keeps the same mask unless ``mask_free_eval``.
    """
    out = []
    for name in rows or list(ABLATION_ROWS):
        probe = ProbeSpec(ABLATION_ROWS[name])
        ems, f1s = [], []
        for s in seeds:
            res = train(model_config, train_data, replace(train_config, seed=s, probe=probe), vocab, mode)
            eval_probe = None if mask_free_eval else probe.as_phase("decode-time")
            rep = evaluate(res.model, eval_data, eval_probe, seed=s)
            ems.append(rep.em)
            f1s.append(rep.f1)
        out.append(AblationRow(name, probe.to_dict(), ems, f1s))
    return out


# -- stratified sweeps ------------------------------------------------------


def qtype_analysis(model: TransformerQA, data: EncodedDataset, jobs: int = 1) -> dict:
    """Layer sweep per question type; small groups are flagged, empty ones noted."""
    groups: dict[str, list[int]] = {}
    for i, it in enumerate(data.items):
        groups.setdefault(it.qtype, []).append(i)
    types = {}
    notes = []
    for qt in QUESTION_TYPES + ("other",):
        idx = groups.get(qt)
        if not idx:
            notes.append(f"{qt}: no examples, omitted")
            continue
        m = layer_sweep(model, data.subset(idx), jobs=jobs)
        types[qt] = {
            "count": len(idx),
            "low_confidence": len(idx) < LOW_CONFIDENCE_COUNT,
            "mean_abs_delta": m.mean_abs(),
            "matrix": m.to_dict(),
        }
    strongest = max(types, key=lambda t: types[t]["mean_abs_delta"]) if types else None
    return {"types": types, "notes": notes, "total": len(data), "strongest_type": strongest}


def subset_comparison(model: TransformerQA, data: EncodedDataset, tag_a: str, tag_b: str, jobs: int = 1):
    tags = {it.example.subset for it in data.items}
    for tag in (tag_a, tag_b):
        if tag not in tags:
            raise ValueError(f"subset tag {tag!r} not present (have {sorted(tags)})")
    a = layer_sweep(model, data.where(lambda it: it.example.subset == tag_a), jobs=jobs)
    b = layer_sweep(model, data.where(lambda it: it.example.subset == tag_b), jobs=jobs)
    return a, b


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False)
