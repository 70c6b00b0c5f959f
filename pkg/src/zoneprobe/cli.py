"""Command-line entry point: ``zoneprobe <command> [options]``.

Every command resolves its configuration (JSON files, then ``--set``
overrides, then flags) into one dict, writes its outputs into a staging
directory, and only moves them into ``--out`` together with a
``manifest.json`` once everything succeeded.  ``zoneprobe replay`` reruns a
command from a manifest alone.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import probe as P
from .config import ConfigError, apply_overrides, load_json, validate
from .data import (
    Example,
    GeneratorConfig,
    LoadError,
    Vocabulary,
    dataset_checksum,
    dumps_dataset,
    encode,
    encode_dataset,
    generate_synthetic,
    load_dataset,
    mode_for_language,
    make_batch,
    sequence_tokens,
)
from .evaluation import evaluate
from .model import AttentionRecord, ModelConfig, TransformerQA
from .train import DEFAULT_SEEDS, Aggregate, TrainConfig, train
from .viz import HeatmapStyle, emit_attention_lines, emit_head_boxes, emit_heatmap
from .zones import InputLayout, ProbeSpec

OUT_ENV = "ZONEPROBE_OUT"
MANIFEST = "manifest.json"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Stage:
    """Collects output files in a temp dir next to the destination."""

    def __init__(self, out: Path):
        self.out = out
        out.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.files:
            self.files.append(name)
        return p

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text, encoding="utf-8")

    def write_bytes(self, name: str, data: bytes) -> None:
        self.path(name).write_bytes(data)

    def digests(self) -> dict[str, str]:
        return {f: _sha256((self.dir / f).read_bytes()) for f in sorted(self.files)}

    def commit(self) -> None:
        """Swap the staged tree in; a previous run's directory is replaced whole."""
        if self.out.exists():
            if not (self.out / MANIFEST).is_file() and any(self.out.iterdir()):
                raise ConfigError(f"{self.out}: exists, is not empty and holds no {MANIFEST}")
            old = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.old.", dir=self.out.parent))
            os.replace(self.out, old / "prev")
            os.replace(self.dir, self.out)
            shutil.rmtree(old)
        else:
            os.replace(self.dir, self.out)

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


# -- shared loaders ---------------------------------------------------------


def _abs(path) -> str:
    return str(Path(path).resolve())


def _load_probe(path):
    if path in (None, "none"):
        return None
    return load_json(path, "probe")


def _probe(d) -> ProbeSpec | None:
    return None if d is None else ProbeSpec.from_dict(d)


def _load_model(path) -> TransformerQA:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: checkpoint not found")
    return TransformerQA.load(p)


def _encoded(model: TransformerQA, data_path):
    examples = load_dataset(data_path)
    return examples, encode_dataset(examples, model.vocab, model.config.max_length, model.mode)


def _data_files(directory) -> tuple[Path, Path | None]:
    d = Path(directory)
    train_file = d / "train.json"
    if not train_file.is_file():
        raise ConfigError(f"{d}: no train.json (expected a gen-data output directory)")
    dev_file = d / "dev.json"
    return train_file, dev_file if dev_file.is_file() else None


def _csv_with_header(meta: dict, body: str) -> str:
    lines = [f"# {k}={json.dumps(v, sort_keys=True)}" for k, v in sorted(meta.items())]
    return "\n".join(lines) + "\n" + body


def _resolve_model_train(args) -> tuple[dict, dict]:
    model = load_json(args.model_config, "model-config") if args.model_config else {}
    tcfg = load_json(args.train_config, "train-config") if args.train_config else {}
    sections = {"model": model, "train": tcfg}
    apply_overrides(sections, args.set)
    problems = []
    for name, data, label in (("model-config", model, "model"), ("train-config", tcfg, "train")):
        try:
            validate(name, data, label)
        except ConfigError as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError("\n".join(problems))
    return model, tcfg


def _seeds(args, tcfg: dict) -> list[int]:
    if args.seeds:
        return list(args.seeds)
    if "seed" in tcfg:
        return [tcfg["seed"]]
    return list(DEFAULT_SEEDS)


# -- commands ---------------------------------------------------------------
# Each command is split into resolve(args) -> config dict and run(config,
# stage, jobs) -> manifest metadata, so replay can skip the first half.


def resolve_gen_data(args) -> dict:
    gen = load_json(args.config, "generator-config") if args.config else {}
    apply_overrides({"gen": gen}, args.set)
    validate("generator-config", gen, "gen")
    return {"generator": GeneratorConfig.from_dict(gen).to_dict(), "seed": args.seed}


def run_gen_data(cfg: dict, stage: Stage, jobs: int) -> dict:
    ds = generate_synthetic(GeneratorConfig.from_dict(cfg["generator"]), seed=cfg["seed"])
    stage.write_text("train.json", dumps_dataset(ds.train, "train"))
    stage.write_text("dev.json", dumps_dataset(ds.dev, "dev"))
    stage.write_text("generator-config.json", _dumps(cfg["generator"]))
    return {"dataset_checksum": dataset_checksum(ds.train + ds.dev), "seeds": [cfg["seed"]]}


def resolve_train(args) -> dict:
    model, tcfg = _resolve_model_train(args)
    _data_files(args.data)
    return {"data": _abs(args.data), "model": model, "train": tcfg, "seeds": _seeds(args, tcfg)}


def _fit_one(cfg: dict, seed: int):
    train_file, dev_file = _data_files(cfg["data"])
    examples = load_dataset(train_file)
    mode = mode_for_language(examples[0].language)
    vocab = Vocabulary.build(examples, mode)
    mcfg = ModelConfig(vocab_size=len(vocab), **cfg["model"])
    tdata = encode_dataset(examples, vocab, mcfg.max_length, mode)
    tcfg = TrainConfig.from_dict({**cfg["train"], "seed": seed})
    res = train(mcfg, tdata, tcfg, vocab, mode)
    report = None
    if dev_file is not None:
        dev = encode_dataset(load_dataset(dev_file), vocab, mcfg.max_length, mode)
        report = evaluate(res.model, dev, tcfg.probe, seed=seed)
    return res.model.to_bytes(), res.log_lines(), report


def run_train(cfg: dict, stage: Stage, jobs: int) -> dict:
    seeds = cfg["seeds"]
    if jobs > 1 and len(seeds) > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=jobs)(delayed(_fit_one)(cfg, s) for s in seeds)
    else:
        results = [_fit_one(cfg, s) for s in seeds]
    checksums, reports = {}, []
    for s, (blob, log, report) in zip(seeds, results):
        stage.write_bytes(f"seed{s}/model.zpck", blob)
        stage.write_text(f"seed{s}/train_log.jsonl", log)
        checksums[str(s)] = _sha256(blob)
        if report is not None:
            stage.write_text(f"seed{s}/report.json", report.to_json() + "\n")
            reports.append(report)
    if reports:
        stage.write_text("aggregate.json", _dumps(Aggregate.from_reports(seeds, reports).to_dict()))
    train_file, dev_file = _data_files(cfg["data"])
    examples = load_dataset(train_file) + (load_dataset(dev_file) if dev_file else [])
    return {"dataset_checksum": dataset_checksum(examples), "model_checksum": checksums, "seeds": seeds}


def resolve_eval(args) -> dict:
    return {"checkpoint": _abs(args.checkpoint), "data": _abs(args.data), "probe": _load_probe(args.probe)}


def _checkpoint_meta(model: TransformerQA, examples, seeds=()) -> dict:
    return {"dataset_checksum": dataset_checksum(examples), "model_checksum": model.checksum(), "seeds": list(seeds)}


def run_eval(cfg: dict, stage: Stage, jobs: int) -> dict:
    model = _load_model(cfg["checkpoint"])
    examples, data = _encoded(model, cfg["data"])
    report = evaluate(model, data, _probe(cfg["probe"]))
    stage.write_text("report.json", report.to_json() + "\n")
    stage.write_text("records.csv", report.records_csv())
    return _checkpoint_meta(model, examples)


def resolve_ablate(args) -> dict:
    model, tcfg = _resolve_model_train(args)
    _data_files(args.data)
    rows = args.rows or list(P.ABLATION_ROWS)
    unknown = [r for r in rows if r not in P.ABLATION_ROWS]
    if unknown:
        raise ConfigError(f"rows: unknown ablation rows {unknown}; choose from {list(P.ABLATION_ROWS)}")
    return {
        "data": _abs(args.data),
        "model": model,
        "train": tcfg,
        "seeds": _seeds(args, {}),
        "rows": rows,
        "mask_free_eval": args.mask_free_eval,
    }


def run_ablate(cfg: dict, stage: Stage, jobs: int) -> dict:
    train_file, dev_file = _data_files(cfg["data"])
    if dev_file is None:
        raise ConfigError(f"{cfg['data']}: ablation needs a dev.json to evaluate on")
    examples, dev_examples = load_dataset(train_file), load_dataset(dev_file)
    mode = mode_for_language(examples[0].language)
    vocab = Vocabulary.build(examples, mode)
    mcfg = ModelConfig(vocab_size=len(vocab), **cfg["model"])
    tdata = encode_dataset(examples, vocab, mcfg.max_length, mode)
    ddata = encode_dataset(dev_examples, vocab, mcfg.max_length, mode)
    rows = P.train_time_zone_ablation(
        tdata,
        ddata,
        mcfg,
        TrainConfig.from_dict(cfg["train"]),
        seeds=cfg["seeds"],
        vocab=vocab,
        mode=mode,
        rows=cfg["rows"],
        mask_free_eval=cfg["mask_free_eval"],
    )
    table = [r.to_dict() for r in rows]
    stage.write_text("ablation.json", _dumps({"rows": table, "seeds": cfg["seeds"]}))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "em_mean", "em_std", "f1_mean", "f1_std"])
    for r in table:
        w.writerow([r["name"], repr(r["em_mean"]), repr(r["em_std"]), repr(r["f1_mean"]), repr(r["f1_std"])])
    stage.write_text("ablation.csv", buf.getvalue())
    return {"dataset_checksum": dataset_checksum(examples + dev_examples), "seeds": cfg["seeds"]}


def _checkpoint_cfg(args, **extra) -> dict:
    return {"checkpoint": _abs(args.checkpoint), "data": _abs(args.data), **extra}


def run_sweep(cfg: dict, stage: Stage, jobs: int) -> dict:
    model = _load_model(cfg["checkpoint"])
    examples, data = _encoded(model, cfg["data"])
    fn = P.layer_sweep if cfg["axis"] == "layer" else P.head_sweep
    matrix = fn(model, data, jobs=jobs)
    meta = _checkpoint_meta(model, examples)
    matrix.seeds = meta["seeds"]
    probes = {
        f"{row}/{col}": P.zone_probe(row, **{"layers" if cfg["axis"] == "layer" else "heads": [i]}).to_dict()
        for row in matrix.rows
        for i, col in enumerate(matrix.columns)
    }
    doc = {"matrix": matrix.to_dict(), "model_checksum": meta["model_checksum"], "probes": probes}
    stage.write_text("sweep.json", _dumps(doc))
    stage.write_text("sweep.csv", _csv_with_header({"model_checksum": meta["model_checksum"], "axis": cfg["axis"]}, matrix.to_csv()))
    return meta


def run_topk(cfg: dict, stage: Stage, jobs: int) -> dict:
    model = _load_model(cfg["checkpoint"])
    examples, data = _encoded(model, cfg["data"])
    table = P.decode_time_removal(model, data, k=cfg["k"], jobs=jobs)
    meta = _checkpoint_meta(model, examples)
    stage.write_text("topk.json", _dumps({"table": table.to_dict(), "model_checksum": meta["model_checksum"]}))
    return meta


def resolve_rankcorr(args) -> dict:
    if args.kmax < 2:
        raise ConfigError("kmax: rank correlation needs at least two ranks")
    return {
        "checkpoints": [_abs(c) for c in args.checkpoint],
        "data": _abs(args.data),
        "kmax": args.kmax,
        "granularity": args.granularity,
        "rank_on": args.rank_on,
    }


def run_rankcorr(cfg: dict, stage: Stage, jobs: int) -> dict:
    results, checksums = [], []
    examples = None
    for path in cfg["checkpoints"]:
        model = _load_model(path)
        examples, data = _encoded(model, cfg["data"])
        results.append(P.rank_correlation(model, data, cfg["kmax"], cfg["granularity"], cfg["rank_on"], jobs=jobs))
        checksums.append(model.checksum())
    out = {
        "runs": [dict(r.to_dict(), model_checksum=c) for r, c in zip(results, checksums)],
        "aggregate": P.aggregate_correlations(results),
    }
    stage.write_text("rankcorr.json", _dumps(out))
    return {"dataset_checksum": dataset_checksum(examples), "model_checksum": checksums, "seeds": []}


def run_qtype(cfg: dict, stage: Stage, jobs: int) -> dict:
    model = _load_model(cfg["checkpoint"])
    examples, data = _encoded(model, cfg["data"])
    meta = _checkpoint_meta(model, examples)
    stage.write_text("qtype.json", _dumps(dict(P.qtype_analysis(model, data, jobs=jobs), model_checksum=meta["model_checksum"])))
    return meta


def run_compare(cfg: dict, stage: Stage, jobs: int) -> dict:
    model = _load_model(cfg["checkpoint"])
    examples, data = _encoded(model, cfg["data"])
    a, b = P.subset_comparison(model, data, cfg["tag_a"], cfg["tag_b"], jobs=jobs)
    meta = _checkpoint_meta(model, examples)
    stage.write_text(
        "compare.json",
        _dumps({"a": a.to_dict(), "b": b.to_dict(), "tags": [cfg["tag_a"], cfg["tag_b"]], "model_checksum": meta["model_checksum"]}),
    )
    for tag, m in (("a", a), ("b", b)):
        header = {"subset": cfg[f"tag_{tag}"], "model_checksum": meta["model_checksum"]}
        stage.write_text(f"compare_{tag}.csv", _csv_with_header(header, m.to_csv()))
    return meta


def resolve_record(args) -> dict:
    if args.data is None and (args.question is None or args.context is None):
        raise ConfigError("record: give either --data (with --index) or both --question and --context")
    return {
        "checkpoint": _abs(args.checkpoint),
        "data": _abs(args.data) if args.data else None,
        "index": args.index,
        "question": args.question,
        "context": args.context,
        "probe": _load_probe(args.probe),
    }


def run_record(cfg: dict, stage: Stage, jobs: int) -> dict:
    model = _load_model(cfg["checkpoint"])
    if cfg["data"]:
        examples = load_dataset(cfg["data"])
        if not 0 <= cfg["index"] < len(examples):
            raise ConfigError(f"index: {cfg['index']} outside 0..{len(examples) - 1}")
        ex = examples[cfg["index"]]
    else:
        ex = Example("input", cfg["context"], cfg["question"], [])
        examples = [ex]
    item = encode(ex, model.vocab, model.config.max_length, model.mode)
    _, rec = model.forward(make_batch([item]), _probe(cfg["probe"]), record=True)
    lay = item.layout
    out = {
        "id": ex.id,
        "tokens": sequence_tokens(item, model.mode),
        "layout": {"n_question": lay.n_question, "n_passage": lay.n_passage, "length": lay.used_length},
        "record": _trim_record(rec.to_dict(), lay.used_length),
        "probe": cfg["probe"],
        "model_checksum": model.checksum(),
    }
    stage.write_text("attention.json", _dumps(out))
    return _checkpoint_meta(model, examples)


def _trim_record(d: dict, n: int) -> dict:
    """Drop padding rows and columns so the file holds only the used positions."""
    cut = lambda a: [row[:n] for row in a[:n]]  # noqa: E731
    return {
        "pre": [[cut(h) for h in layer] for layer in d["pre"]],
        "post": [[cut(h) for h in layer] for layer in d["post"]],
        "overlay": [None if m is None else [cut(h) for h in m] for m in d["overlay"]],
    }


def resolve_viz(args) -> dict:
    style = load_json(args.style) if args.style else None
    return {
        "result": _abs(args.result),
        "kind": args.kind,
        "style": style,
        "title": args.title,
        "which": args.which,
        "layer": args.layer,
        "heads": args.heads,
        "threshold": args.threshold,
        "keep_special": args.keep_special,
        "focus": args.focus,
        "direction": args.direction,
    }


def _matrix_from(result: dict, which: str):
    if "matrix" in result:
        return P.DeltaMatrix.from_dict(result["matrix"])
    if which in result and "cells" in result[which]:
        return P.DeltaMatrix.from_dict(result[which])
    if "cells" in result:
        return P.DeltaMatrix.from_dict(result)
    raise ConfigError("result: no delta matrix found (expected sweep.json or compare.json)")


def run_viz(cfg: dict, stage: Stage, jobs: int) -> dict:
    result = load_json(cfg["result"])
    if cfg["kind"] == "heatmap":
        style = HeatmapStyle.from_dict(cfg["style"]) if cfg["style"] else None
        svg = emit_heatmap(_matrix_from(result, cfg["which"]), style=style, title=cfg["title"])
    else:
        if "record" not in result or "tokens" not in result:
            raise ConfigError("result: lines and boxes need an attention.json from the record command")
        rec = AttentionRecord.from_dict(result["record"])
        lay = InputLayout(result["layout"]["n_question"], result["layout"]["n_passage"], result["layout"]["length"])
        n_heads = len(result["record"]["post"][cfg["layer"]]) if 0 <= cfg["layer"] < len(result["record"]["post"]) else 0
        heads = cfg["heads"] if cfg["heads"] is not None else list(range(n_heads))
        if cfg["kind"] == "lines":
            svg = emit_attention_lines(
                rec, cfg["layer"], heads, lay, result["tokens"], not cfg["keep_special"], cfg["threshold"]
            )
        else:
            svg = emit_head_boxes(rec, cfg["layer"], heads, lay, result["tokens"], cfg["focus"], direction=cfg["direction"])
    stage.write_text("figure.svg", svg)
    return {"dataset_checksum": None, "model_checksum": result.get("model_checksum"), "seeds": []}


COMMANDS = {
    "gen-data": (resolve_gen_data, run_gen_data),
    "train": (resolve_train, run_train),
    "eval": (resolve_eval, run_eval),
    "ablate-train": (resolve_ablate, run_ablate),
    "sweep": (lambda a: _checkpoint_cfg(a, axis=a.axis), run_sweep),
    "topk": (lambda a: _checkpoint_cfg(a, k=a.k), run_topk),
    "rankcorr": (resolve_rankcorr, run_rankcorr),
    "qtype": (lambda a: _checkpoint_cfg(a), run_qtype),
    "compare": (lambda a: _checkpoint_cfg(a, tag_a=a.tag_a, tag_b=a.tag_b), run_compare),
    "record": (resolve_record, run_record),
    "viz": (resolve_viz, run_viz),
}


def execute(command: str, cfg: dict, out: Path, jobs: int = 1) -> dict:
    """Run a resolved command into ``out`` atomically and return its manifest."""
    run = COMMANDS[command][1]
    started = datetime.now(timezone.utc).isoformat()
    stage = Stage(out)
    try:
        meta = run(cfg, stage, jobs)
        manifest = {
            "command": command,
            "config": cfg,
            "dataset_checksum": meta.get("dataset_checksum"),
            "model_checksum": meta.get("model_checksum"),
            "seeds": meta.get("seeds", []),
            "version": __version__,
            "outputs": stage.digests(),
            "started": started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        stage.write_text(MANIFEST, _dumps(manifest))
        stage.commit()
    except BaseException:
        stage.discard()
        raise
    return manifest


def default_out(command: str) -> Path:
    root = os.environ.get(OUT_ENV)
    return Path(root or "runs") / command


# -- argument parsing -----------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV}/<command> or ./runs/<command>)")
    p.add_argument("--jobs", type=int, default=1, help="maximum parallel sweep cells or seeds")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE", help="override one config field")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zoneprobe", description="Attention-zone probing for span-extraction QA.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--config", help="generator-config JSON")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    for name, helptext in (("train", "train one model per seed"), ("ablate-train", "retrain under each train-time mask")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="directory with train.json and dev.json")
        p.add_argument("--model-config")
        p.add_argument("--train-config")
        p.add_argument("--seeds", type=int, nargs="+")
        if name == "ablate-train":
            p.add_argument("--rows", nargs="+", help=f"subset of {', '.join(P.ABLATION_ROWS)}")
            p.add_argument("--mask-free-eval", action="store_true", help="evaluate without the training mask")
        _add_common(p)

    def checkpoint_parser(name, helptext, multi=False):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True, nargs="+" if multi else None)
        p.add_argument("--data", required=True, help="dataset JSON")
        _add_common(p)
        return p

    p = checkpoint_parser("eval", "EM/F1 under an optional probe")
    p.add_argument("--probe", default=None, help="probe JSON, or 'none'")
    p = checkpoint_parser("sweep", "layer-wise or head-wise zone sweep")
    p.add_argument("--axis", choices=("layer", "head"), default="layer")
    p = checkpoint_parser("topk", "remove whole zones and their top-k cells")
    p.add_argument("--k", type=int, default=10)
    p = checkpoint_parser("rankcorr", "rank correlation of k-th cell removal", multi=True)
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--granularity", choices=("per-row", "per-zone"), default="per-row")
    p.add_argument("--rank-on", choices=("pre", "post"), default="pre")
    checkpoint_parser("qtype", "layer sweep per question type")
    p = checkpoint_parser("compare", "layer sweeps of two tagged subsets")
    p.add_argument("--tag-a", required=True)
    p.add_argument("--tag-b", required=True)

    p = sub.add_parser("record", help="save attention maps of one example")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset JSON to take the example from")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--question")
    p.add_argument("--context")
    p.add_argument("--probe", default=None)
    _add_common(p)

    p = sub.add_parser("viz", help="render a result file as SVG")
    p.add_argument("--result", required=True, help="sweep.json, compare.json or attention.json")
    p.add_argument("--kind", choices=("heatmap", "lines", "boxes"), required=True)
    p.add_argument("--style", help="heatmap style JSON")
    p.add_argument("--title")
    p.add_argument("--which", choices=("a", "b"), default="a", help="matrix of a compare.json")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--heads", type=int, nargs="+")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--keep-special", action="store_true")
    p.add_argument("--focus", type=int, default=0)
    p.add_argument("--direction", choices=("from", "to"), default="from")
    _add_common(p)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="default: the manifest's directory")
    p.add_argument("--jobs", type=int, default=1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("jobs: must be >= 1")
        if args.command == "replay":
            manifest = load_json(args.manifest)
            command, cfg = manifest.get("command"), manifest.get("config")
            if command not in COMMANDS or not isinstance(cfg, dict):
                raise ConfigError(f"{args.manifest}: not a zoneprobe manifest")
            out = args.out or args.manifest.resolve().parent
        else:
            command = args.command
            cfg = COMMANDS[command][0](args)
            out = args.out or default_out(command)
        execute(command, cfg, Path(out), args.jobs)
    except (ConfigError, LoadError, ValueError, FileNotFoundError) as exc:
        print(f"zoneprobe {getattr(args, 'command', '')}: error: {exc}", file=sys.stderr)
        return 2
    print(str(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
