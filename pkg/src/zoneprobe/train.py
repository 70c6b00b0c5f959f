"""Seeded Adam training with warmup/decay, optional train-time masks, and
the multi-seed protocol."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import EncodedDataset, Vocabulary, make_batch
from .evaluation import MetricReport, evaluate
from .model import ModelConfig, TransformerQA, span_loss
from .zones import ProbeSpec

DEFAULT_SEEDS = (11, 22, 33, 44, 55)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup: float = 0.1
    clip_norm: float = 1.0
    seed: int = 11
    probe: ProbeSpec | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.warmup < 1.0:
            raise ValueError("warmup fraction must lie in [0, 1)")
        if isinstance(self.probe, (dict, list)):
            self.probe = ProbeSpec.from_dict(self.probe)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "probe"}
        d["probe"] = self.probe.to_dict() if self.probe else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown train config fields: {sorted(extra)}")
        return cls(**d)


def warmup_steps(total: int, fraction: float) -> int:
    w = max(1, int(round(fraction * total)))
    return min(w, max(total - 1, 1))


def lr_at(step: int, total: int, warmup: int, peak: float) -> float:
    """Linear warmup to ``peak`` at step ``warmup-1``, then linear decay to 0 at ``total-1``."""
    if step < warmup:
        return peak * (step + 1) / warmup
    if total - warmup <= 0:
        return peak
    return peak * (total - 1 - step) / (total - warmup)


class Adam:
    def __init__(self, params: Sequence[T.Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            if lr:
                p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Sequence[T.Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


@dataclass
class TrainResult:
    model: TransformerQA
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)

    def log_lines(self) -> str:
        return "".join(
            json.dumps({"step": i, "loss": loss, "lr": lr}) + "\n"
            for i, (loss, lr) in enumerate(zip(self.losses, self.lrs))
        )


def train(
    model_config: ModelConfig,
    data: EncodedDataset,
    cfg: TrainConfig,
    vocab: Vocabulary | None = None,
    mode: str = "word",
    on_step: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Fit a fresh model on the answerable items of ``data``.

    Initialisation, shuffling and dropout draw from independent streams
    spawned from ``cfg.seed``.
    """
    items = [it for it in data.items if it.answerable]
    if not items:
        raise ValueError("no answerable training examples")
    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    model = TransformerQA(model_config, seed=int(init_ss.generate_state(1)[0]), vocab=vocab, mode=mode)
    if cfg.probe:
        cfg.probe.validate(model_config.n_layers, model_config.n_heads)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    params = model.parameters()
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    per_epoch = math.ceil(len(items) / cfg.batch_size)
    total = per_epoch * cfg.epochs
    warm = warmup_steps(total, cfg.warmup)
    result = TrainResult(model)
    step = 0
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(items))
        for lo in range(0, len(items), cfg.batch_size):
            batch = make_batch([items[i] for i in order[lo : lo + cfg.batch_size]])
            for p in params:
                p.grad = None
            with T.Tape() as tape:
                logits, _ = model.forward(batch, cfg.probe, phase="train-time", rng=drop_rng)
                loss = span_loss(logits, batch.starts, batch.ends, batch.padding)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(step)
            tape.backward(loss)
            clip_grad_norm(params, cfg.clip_norm)
            lr = lr_at(step, total, warm, cfg.lr)
            opt.step(lr)
            result.losses.append(value)
            result.lrs.append(lr)
            if on_step is not None:
                on_step(step, value, lr)
            step += 1
    return result


@dataclass
class SeedRun:
    seed: int
    model: TransformerQA
    report: MetricReport
    losses: list[float]


@dataclass
class Aggregate:
    seeds: list[int]
    em: list[float]
    f1: list[float]

    @property
    def em_mean(self) -> float:
        return statistics.fmean(self.em)

    @property
    def f1_mean(self) -> float:
        return statistics.fmean(self.f1)

    @property
    def em_std(self) -> float:
        return statistics.stdev(self.em) if len(self.em) > 1 else 0.0

    @property
    def f1_std(self) -> float:
        return statistics.stdev(self.f1) if len(self.f1) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "em": self.em,
            "f1": self.f1,
            "em_mean": self.em_mean,
            "em_std": self.em_std,
            "f1_mean": self.f1_mean,
            "f1_std": self.f1_std,
        }

    @classmethod
    def from_reports(cls, seeds: Sequence[int], reports: Sequence[MetricReport]) -> "Aggregate":
        return cls(list(seeds), [r.em for r in reports], [r.f1 for r in reports])


def multi_seed_run(
    model_config: ModelConfig,
    train_data: EncodedDataset,
    eval_data: EncodedDataset,
    cfg: TrainConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    vocab: Vocabulary | None = None,
    mode: str = "word",
    eval_probe: ProbeSpec | None = None,
) -> tuple[list[SeedRun], Aggregate]:
    """Train and evaluate once per seed; mean and sample std of EM/F1 across seeds."""
    if not seeds:
        raise ValueError("at least one seed is required")
    runs = []
    for s in seeds:
        res = train(model_config, train_data, replace(cfg, seed=s), vocab, mode)
        report = evaluate(res.model, eval_data, eval_probe, seed=s)
        runs.append(SeedRun(s, res.model, report, res.losses))
    return runs, Aggregate.from_reports(seeds, [r.report for r in runs])
