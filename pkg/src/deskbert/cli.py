"""Command-line entry point: ``deskbert {generate,pretrain,finetune,ablate,report}``.

Exit codes: 0 success, 2 input or path problem, 3 data file parse error,
4 runtime or numeric failure (including failed ablation cells).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import experiments as ex
from . import synthetic
from .checkpoint import Checkpoint, file_hash, load_checkpoint, save_checkpoint
from .config import ABLATIONS, ExperimentConfig, load_config
from .data import (
    LABELS,
    AGREEMENT_LEVELS,
    LabeledSentence,
    Vocabulary,
    build_vocab,
    filter_corpus,
    kfold_split,
    parse_fiqa,
    parse_phrasebank,
    read_corpus_dir,
    read_keywords,
    split_dataset,
    write_fiqa,
    write_phrasebank,
)
from .errors import ConfigMismatchError, CorruptCheckpointError, DeskbertError, InputError, ParseError
from .metrics import compute_classification_metrics
from .model import ModelParams, init_params
from .training import finetune_classifier, finetune_regressor, predict_logits, pretrain_mlm

log = logging.getLogger("deskbert")

EXIT_OK, EXIT_INPUT, EXIT_PARSE, EXIT_RUNTIME = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ""
    return "" if value is None else str(value)


def _json_safe(obj):
    """Replace non-finite floats with None so reports stay strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _dir_hash(path: Path) -> str:
    h = hashlib.sha256()
    for file in sorted(path.glob("*.txt")):
        h.update(file.name.encode("utf-8") + b"\0" + file.read_bytes() + b"\0")
    return h.hexdigest()[:16]


def _input_dirs(cfg: ExperimentConfig) -> List[Path]:
    d = cfg.data
    dirs = [Path(p) for p in (d.corpus_dir, d.domain_corpus_dir) if p]
    dirs += [Path(p).parent for p in (d.phrasebank, d.fiqa, d.keywords) if p]
    return [p.resolve() for p in dirs]


def _prepare_out(out: str, cfg: Optional[ExperimentConfig]) -> Path:
    out_path = Path(out).resolve()
    if cfg is not None:
        for d in _input_dirs(cfg):
            if out_path == d or d in out_path.parents:
                raise InputError(f"output directory {out_path} lies inside input directory {d}")
    if out_path.exists() and not out_path.is_dir():
        raise InputError(f"output path {out_path} exists and is not a directory")
    out_path.mkdir(parents=True, exist_ok=True)
    return out_path


def _require(path: Optional[str], what: str) -> Path:
    if not path:
        raise InputError(f"config data.{what} is required for this command")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} path {p} does not exist")
    return p


def _sniff(path: Path) -> str:
    """'json' if the file looks like a JSON array, else 'text'."""
    head = path.read_text(encoding="utf-8")[:256].lstrip()
    return "json" if head.startswith("[") else "text"


def _load_phrasebank(path_str: Optional[str]) -> List[LabeledSentence]:
    path = _require(path_str, "phrasebank")
    if _sniff(path) == "json":
        raise InputError(f"{path} is a JSON file; classification expects sentence@label lines")
    records = parse_phrasebank(path)
    if not records:
        raise InputError(f"{path} holds no sentences")
    return records


def _load_fiqa(path_str: Optional[str], cfg: ExperimentConfig):
    if not path_str and cfg.data.phrasebank:
        raise InputError("regression needs data.fiqa; a sentence@label file cannot be used for regression")
    path = _require(path_str, "fiqa")
    if _sniff(path) != "json":
        raise InputError(f"{path} is not a JSON array of scored sentences; regression needs FiQA-style data")
    return parse_fiqa(path)


def _load_documents(dir_str: Optional[str], what: str, keywords: Optional[str] = None):
    path = _require(dir_str, what)
    documents = read_corpus_dir(path)
    if not documents:
        raise InputError(f"corpus directory {path} contains no non-empty *.txt documents")
    info = {"documents": len(documents), "corpus_hash": _dir_hash(path)}
    if keywords:
        result = filter_corpus(documents, read_keywords(_require(keywords, "keywords")))
        documents = result.documents
        info.update(kept=result.kept, total=result.total)
        if not documents:
            raise InputError("keyword filter removed every document")
    return documents, info


class _Parent:
    """Starting parameters and vocabulary, from a checkpoint or fresh."""

    def __init__(self, params: ModelParams, vocab: Vocabulary, checkpoint_hash: Optional[str], lineage: list):
        self.params = params
        self.vocab = vocab
        self.checkpoint_hash = checkpoint_hash
        self.lineage = lineage


def _parent(cfg: ExperimentConfig, checkpoint: Optional[str], seed: int, vocab_texts) -> _Parent:
    if checkpoint:
        path = Path(checkpoint)
        if not path.is_file():
            raise InputError(f"checkpoint {path} does not exist")
        ckpt = load_checkpoint(path, expected_config=cfg.model)
        digest = file_hash(path)
        lineage = list(ckpt.provenance.get("lineage", [])) + [digest]
        return _Parent(ckpt.params, Vocabulary(ckpt.vocab), digest, lineage)
    vocab = build_vocab(vocab_texts(), cfg.model.vocab_size)
    return _Parent(init_params(cfg.model, seed), vocab, None, [])


def _provenance(cfg: ExperimentConfig, command: str, seed, parent: _Parent, data_hashes: Dict[str, str]) -> dict:
    return {
        "command": command,
        "kind": cfg.kind,
        "seed": seed,
        "config_hash": cfg.hash(),
        "parent_checkpoint": parent.checkpoint_hash,
        "lineage": parent.lineage,
        "data": data_hashes,
    }


def _check_finite(losses: Sequence[float], what: str) -> None:
    if losses and not np.all(np.isfinite(losses)):
        raise FloatingPointError(f"{what} produced a non-finite loss")


def _loss_rows(losses: Sequence[float]):
    return [(i + 1, _fmt(float(v))) for i, v in enumerate(losses)]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_pretrain(cfg: ExperimentConfig, out: Path, checkpoint: Optional[str]) -> int:
    if cfg.kind != "pretrain":
        raise InputError(f"'pretrain' needs a config of kind 'pretrain', got {cfg.kind!r}")
    seed = cfg.seeds[0]
    documents, corpus_info = _load_documents(cfg.data.corpus_dir, "corpus_dir", cfg.data.keywords)
    sentences = [s for doc in documents for s in doc]
    parent = _parent(cfg, checkpoint, seed, lambda: sentences)
    params, record = pretrain_mlm(
        parent.params, sentences, parent.vocab, cfg.pretrain_plan, cfg.pretrain_plan.epochs, seed,
        documents=documents if cfg.use_nsp else None, mask_rate=cfg.mask_rate,
    )
    _check_finite(record.step_losses, "pre-training")
    provenance = _provenance(cfg, "pretrain", seed, parent, {"corpus": corpus_info["corpus_hash"]})
    digest = save_checkpoint(out / "pretrained.mbf", Checkpoint(cfg.model, params, parent.vocab.tokens, provenance))
    _write_csv(out / "loss.csv", ("step", "loss"), _loss_rows(record.step_losses))
    report = {
        "provenance": provenance,
        "checkpoint": {"file": "pretrained.mbf", "hash": digest},
        "corpus": corpus_info,
        "objective": record.info["objective"],
        "steps": len(record.step_losses),
        "final_loss": record.step_losses[-1] if record.step_losses else None,
    }
    _write_json(out / "report.json", _json_safe(report))
    log.info("pre-trained %d steps; checkpoint %s", len(record.step_losses), digest)
    return EXIT_OK


def _by_agreement(params, vocab, records, weights, plan) -> Dict[str, dict]:
    """Test metrics on each annotator-agreement subset (cumulative: at least that level)."""
    logits = predict_logits(params, vocab, [r.text for r in records], plan.head_source, plan.include_embeddings_in_mean)
    gold = np.array([r.label_id for r in records])
    agreement = np.array([r.agreement if r.agreement is not None else -1 for r in records])
    out = {}
    for level in AGREEMENT_LEVELS:
        keep = agreement >= level
        if keep.any():
            m = compute_classification_metrics(logits[keep].argmax(1), gold[keep], weights, logits[keep])
            out[str(level)] = m.to_dict()
    return out


def cmd_finetune(cfg: ExperimentConfig, out: Path, checkpoint: Optional[str]) -> int:
    if cfg.kind == "finetune-reg":
        return _finetune_regression(cfg, out, checkpoint)
    if cfg.kind != "finetune-cls":
        raise InputError(f"'finetune' needs kind 'finetune-cls' or 'finetune-reg', got {cfg.kind!r}")
    seed = cfg.seeds[0]
    records = _load_phrasebank(cfg.data.phrasebank)
    splits = split_dataset(records, seed, stratify=cfg.stratify)
    parent = _parent(cfg, checkpoint, seed, lambda: [r.text for r in splits.train])
    params, record = finetune_classifier(parent.params, splits, parent.vocab, cfg.plan, seed)
    _check_finite(record.step_losses, "fine-tuning")
    provenance = _provenance(cfg, "finetune", seed, parent, {"phrasebank": file_hash(cfg.data.phrasebank)})
    weights = record.info["class_weights"]
    metrics = {
        "provenance": provenance,
        "task": "classification",
        "split_sizes": {"train": len(splits.train), "validation": len(splits.validation), "test": len(splits.test)},
        "class_weights": weights,
        "best_epoch": record.best_epoch,
        "val_losses": record.val_losses,
        "val_accuracy": record.val_accuracy,
        "test": record.test_metrics.to_dict(),
        "test_by_agreement": _by_agreement(params, parent.vocab, splits.test, weights, cfg.plan),
    }
    digest = save_checkpoint(out / "finetuned.mbf", Checkpoint(cfg.model, params, parent.vocab.tokens, provenance))
    metrics["checkpoint"] = {"file": "finetuned.mbf", "hash": digest}
    _write_json(out / "metrics.json", _json_safe(metrics))
    cm = record.test_metrics.confusion
    _write_csv(out / "confusion.csv", ["gold\\pred", *LABELS], [[LABELS[i], *row] for i, row in enumerate(cm)])
    _write_csv(
        out / "valloss.csv", ("epoch", "val_loss", "val_accuracy"),
        [(i + 1, _fmt(l), _fmt(a)) for i, (l, a) in enumerate(zip(record.val_losses, record.val_accuracy))],
    )
    _write_csv(out / "loss.csv", ("step", "loss"), _loss_rows(record.step_losses))
    strata = metrics["test_by_agreement"]
    _write_csv(
        out / "agreement.csv", ("min_agreement", "n", "accuracy", "macro_f1", "weighted_ce"),
        [(k, v["n"], _fmt(v["accuracy"]), _fmt(v["macro_f1"]), _fmt(v["weighted_ce"])) for k, v in strata.items()],
    )
    log.info("test accuracy %.4f (best epoch %d)", record.test_metrics.accuracy, record.best_epoch)
    return EXIT_OK


def _finetune_regression(cfg: ExperimentConfig, out: Path, checkpoint: Optional[str]) -> int:
    seed = cfg.seeds[0]
    records = _load_fiqa(cfg.data.fiqa, cfg)
    if len(records) < cfg.folds:
        raise InputError(f"{len(records)} records cannot fill {cfg.folds} folds")
    folds = kfold_split(records, cfg.folds, seed)
    parent = _parent(cfg, checkpoint, seed, lambda: [r.text for r in records])
    runs = finetune_regressor(parent.params, folds, parent.vocab, cfg.plan, seed)
    for run in runs:
        _check_finite(run.step_losses, "fine-tuning")
    provenance = _provenance(cfg, "finetune", seed, parent, {"fiqa": file_hash(cfg.data.fiqa)})
    per_fold = [r.test_metrics.to_dict() for r in runs]
    r2 = [m["r2"] for m in per_fold if m["r2"] is not None]
    metrics = {
        "provenance": provenance,
        "task": "regression",
        "folds": cfg.folds,
        "per_fold": per_fold,
        "mean_mse": float(np.mean([m["mse"] for m in per_fold])),
        "mean_r2": float(np.mean(r2)) if r2 else None,
        "folds_with_undefined_r2": sum(m["r2_undefined"] for m in per_fold),
    }
    _write_json(out / "metrics.json", _json_safe(metrics))
    _write_csv(
        out / "valloss.csv", ("fold", "epoch", "val_loss"),
        [(f, e + 1, _fmt(v)) for f, run in enumerate(runs) for e, v in enumerate(run.val_losses)],
    )
    _write_csv(
        out / "loss.csv", ("fold", "step", "loss"),
        [(f, s + 1, _fmt(v)) for f, run in enumerate(runs) for s, v in enumerate(run.step_losses)],
    )
    log.info("mean test MSE %.4f over %d folds", metrics["mean_mse"], cfg.folds)
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, out: Path, checkpoint: Optional[str]) -> int:
    if cfg.kind not in ABLATIONS:
        raise InputError(f"'ablate' needs one of {ABLATIONS}, got {cfg.kind!r}")
    seeds = list(cfg.seeds)
    records = _load_phrasebank(cfg.data.phrasebank)
    cache: Dict[int, object] = {}

    def splits(seed):
        if seed not in cache:
            cache[seed] = split_dataset(records, seed, stratify=cfg.stratify)
        return cache[seed]

    data_hashes = {"phrasebank": file_hash(cfg.data.phrasebank)}
    domain_sentences, documents = [], None
    if cfg.kind == "ablate-pretraining":
        docs, info = _load_documents(cfg.data.domain_corpus_dir, "domain_corpus_dir", cfg.data.keywords)
        domain_sentences = [s for d in docs for s in d]
        documents = docs if cfg.use_nsp else None
        data_hashes["domain_corpus"] = info["corpus_hash"]

    def vocab_texts():
        texts = [r.text for r in splits(seeds[0]).train]
        return texts + domain_sentences

    parent = _parent(cfg, checkpoint, seeds[0], vocab_texts)
    grid = cfg.grid
    L = cfg.model.num_layers
    if cfg.kind == "ablate-strategies":
        results = ex.ablate_strategies(parent.params, splits, parent.vocab, cfg.plan, seeds, grid.get("strategies", ex.STRATEGY_GRID))
    elif cfg.kind == "ablate-layers":
        results = ex.ablate_layers(parent.params, splits, parent.vocab, cfg.plan, seeds, grid.get("layers"))
    elif cfg.kind == "ablate-lastk":
        results = ex.ablate_lastk(parent.params, splits, parent.vocab, cfg.plan, seeds, grid.get("k", ex.default_k_grid(L)))
    elif cfg.kind == "ablate-pretraining":
        results = ex.ablate_pretraining(
            parent.params, splits, parent.vocab, domain_sentences, cfg.plan, cfg.pretrain_plan, seeds,
            documents=documents, mask_rate=cfg.mask_rate,
        )
    else:
        sizes = grid.get("sizes")
        if not sizes:
            raise InputError("size-sweep needs grid.sizes")
        results = ex.sweep_sizes(parent.params, splits, parent.vocab, cfg.plan, seeds, sizes)

    provenance = _provenance(cfg, "ablate", seeds, parent, data_hashes)
    _write_grid(out, results)
    report = {
        "provenance": provenance,
        "cells": [_json_safe(r.summary()) for r in results],
        "runs": {r.cell: [rec.to_dict() for rec in r.records] for r in results},
        "failed_cells": [r.cell for r in results if not r.ok],
    }
    _write_json(out / "report.json", _json_safe(report))
    for r in results:
        log.info("%-10s %s", r.cell, {k: v for k, v in r.summary().items() if k in ("accuracy", "min_val_loss")})
    return EXIT_OK if all(r.ok for r in results) else EXIT_RUNTIME


def _write_grid(out: Path, results) -> None:
    _write_csv(
        out / "grid.csv", ex.SUMMARY_COLUMNS,
        [[_fmt(r.summary()[k]) for k in ex.SUMMARY_COLUMNS] for r in results],
    )
    _write_csv(
        out / "runs.csv", ("cell", "seed", "accuracy", "macro_f1", "weighted_ce", "best_epoch", "final_val_loss"),
        [
            (r.cell, rec.seed, _fmt(rec.test_metrics.accuracy), _fmt(rec.test_metrics.macro_f1),
             _fmt(rec.test_metrics.weighted_ce), rec.best_epoch, _fmt(rec.val_losses[-1]))
            for r in results for rec in r.records
        ],
    )
    _write_csv(
        out / "valloss.csv", ("cell", "seed", "epoch", "val_loss"),
        [(r.cell, rec.seed, e + 1, _fmt(v)) for r in results for rec in r.records for e, v in enumerate(rec.val_losses)],
    )


def cmd_report(run_dir: Path, out_file: Optional[str]) -> int:
    """Render a run directory's results as a markdown table."""
    if not run_dir.is_dir():
        raise InputError(f"run directory {run_dir} does not exist")
    lines = []
    if (run_dir / "grid.csv").exists():
        report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
        lines.append(f"# {report['provenance']['kind']} (config {report['provenance']['config_hash']})")
        lines.append("")
        with (run_dir / "grid.csv").open(encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        lines += _markdown(rows[0], rows[1:])
    elif (run_dir / "metrics.json").exists():
        metrics = json.loads((run_dir / "metrics.json").read_text(encoding="utf-8"))
        prov = metrics["provenance"]
        lines.append(f"# {prov['kind']} seed {prov['seed']} (config {prov['config_hash']})")
        lines.append("")
        if metrics["task"] == "classification":
            rows = [["all", metrics["test"]["n"], metrics["test"]["accuracy"], metrics["test"]["macro_f1"], metrics["test"]["weighted_ce"]]]
            rows += [[f">={k}%", v["n"], v["accuracy"], v["macro_f1"], v["weighted_ce"]] for k, v in sorted(metrics["test_by_agreement"].items(), key=lambda kv: int(kv[0]))]
            lines += _markdown(["subset", "n", "accuracy", "macro_f1", "weighted_ce"], rows)
        else:
            rows = [[i, m["n"], m["mse"], m["r2"]] for i, m in enumerate(metrics["per_fold"])]
            lines += _markdown(["fold", "n", "mse", "r2"], rows)
            lines += ["", f"mean MSE {metrics['mean_mse']:.4f}, mean R2 {metrics['mean_r2']}"]
    elif (run_dir / "report.json").exists():
        report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
        lines.append(f"# pretrain seed {report['provenance']['seed']} (config {report['provenance']['config_hash']})")
        lines.append("")
        lines += _markdown(["objective", "steps", "final_loss", "documents"],
                           [[report["objective"], report["steps"], report["final_loss"], report["corpus"]["documents"]]])
    else:
        raise InputError(f"{run_dir} holds no metrics.json, grid.csv or report.json")
    text = "\n".join(lines) + "\n"
    if out_file:
        Path(out_file).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _markdown(header, rows) -> List[str]:
    def cell(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(cell(v) for v in row) + " |" for row in rows]
    return out


def cmd_generate(out: Path, seed: int, size: int, corpus_docs: int) -> int:
    """Write a synthetic dataset bundle and example configs for every command."""
    data_dir = out / "data"
    corpus_dir = data_dir / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    write_phrasebank(data_dir / "phrasebank.txt", synthetic.sentiment_dataset(size, seed), agreement_column=True)
    write_fiqa(data_dir / "fiqa.json", synthetic.regression_dataset(max(size // 2, 20), seed + 1))
    for i, doc in enumerate(synthetic.financial_documents(corpus_docs, 6, seed + 2)):
        (corpus_dir / f"doc-{i:05d}.txt").write_text("\n".join(doc) + "\n", encoding="utf-8")
    (data_dir / "keywords.txt").write_text("\n".join(synthetic.POSITIVE_FIGURES + synthetic.NEGATIVE_FIGURES) + "\n", encoding="utf-8")
    configs = out / "configs"
    configs.mkdir(exist_ok=True)
    paths = {
        "phrasebank": str(data_dir / "phrasebank.txt"),
        "fiqa": str(data_dir / "fiqa.json"),
        "corpus_dir": str(corpus_dir),
        "domain_corpus_dir": str(corpus_dir),
        "keywords": str(data_dir / "keywords.txt"),
    }
    for kind in ("pretrain", "finetune-cls", "finetune-reg", *ABLATIONS):
        cfg = ExperimentConfig(kind=kind, seeds=[seed], plan=replace(ExperimentConfig(kind=kind).plan, peak_lr=1e-3, batch_size=16))
        d = cfg.to_dict()
        d["data"] = dict(paths)
        if kind == "size-sweep":
            d["grid"] = {"sizes": [max(size // 8, 10), max(size // 4, 20)]}
        (configs / f"{kind}.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote synthetic data and configs under %s", out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deskbert", description="Desk-scale financial sentiment BERT experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("pretrain", "masked-LM (further) pre-training on a corpus directory"),
        ("finetune", "fine-tune a classifier or regressor"),
        ("ablate", "run an ablation grid or size sweep"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config's seeds")
        p.add_argument("--checkpoint", help="parent .mbf checkpoint; random init when omitted")
    p = sub.add_parser("report", help="print a run directory's results as a markdown table")
    p.add_argument("run_dir")
    p.add_argument("--out", help="write to this file instead of stdout")
    p = sub.add_parser("generate", help="write a synthetic dataset bundle with example configs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=400, help="labeled sentences")
    p.add_argument("--corpus-docs", type=int, default=200, help="documents in the pre-training corpus")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "report":
        return cmd_report(Path(args.run_dir), args.out)
    if args.command == "generate":
        return cmd_generate(_prepare_out(args.out, None), args.seed, args.size, args.corpus_docs)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    out = _prepare_out(args.out, cfg)
    command = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "ablate": cmd_ablate}[args.command]
    return command(cfg, out, args.checkpoint)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return run(argv)
    except ParseError as exc:
        print(f"deskbert: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (InputError, ConfigMismatchError, CorruptCheckpointError, FileNotFoundError, NotADirectoryError,
            IsADirectoryError, PermissionError, UnicodeDecodeError) as exc:
        print(f"deskbert: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DeskbertError, FloatingPointError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"deskbert: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
