"""Subcommand CLI driving the pipeline end to end.

One batch command per stage: normalize, tokenizer-train, pretrain, finetune,
grid-search, evaluate, report. Every command reads an optional YAML run
config, writes its artifacts under the config's output_dir (resolved against
$GREEKLEGAL_OUTPUT_ROOT when relative), and leaves provenance behind: the
fully resolved config plus content digests of its inputs.

Exit codes: 0 success, 1 config or missing-file errors, 2 corrupt input above
the replacement threshold, 3 task/head mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .config import (
    OUTPUT_ROOT_ENV,
    ConfigError,
    RunConfig,
    dump_resolved,
    load_run_config,
)
from .corpus import (
    CorpusManifest,
    ManifestEntry,
    SplitSpec,
    iter_documents,
    load_classification,
    load_hierarchy,
    load_iob,
    load_manifest,
    pack_sequences,
    save_manifest,
    split,
)
from .masking import format_masked_batch
from .metrics import (
    render_cls_table,
    render_ner_table,
    ner_columns,
    score_classification,
    score_ner,
)
from .model import HeadMismatchError, init_model, load_checkpoint, save_checkpoint
from .textnorm import detect_encoding, normalize_document, transcode
from .tokenizer import encode, fingerprint, load_tokenizer, save_tokenizer, train_bpe
from .training import (
    ClsTask,
    NerTask,
    RunResult,
    aggregate_seeds,
    evaluate_task,
    finetune,
    format_mean_std,
    grid_search,
    load_run_record,
    predict_cls,
    predict_ner,
    pretrain,
    write_run_record,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CORRUPT = 2
EXIT_HEAD_MISMATCH = 3


def _require(value: str | None, key: str) -> Path:
    if not value:
        raise ConfigError(f"config is missing {key}")
    path = Path(value)
    if not path.exists():
        raise FileNotFoundError(value)
    return path


def _output_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    if not out.is_absolute():
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            out = Path(root) / out
    return out


def _sha16(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def _write_provenance(out_dir: Path, config: RunConfig, inputs: dict[str, Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(dump_resolved(config), encoding="utf-8")
    record = {
        "package_version": __version__,
        "inputs": {name: _sha16(path) for name, path in sorted(inputs.items())},
    }
    (out_dir / "provenance.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_text(path: Path, text: str) -> None:
    # Explicit newline handling keeps output files LF-only on every platform.
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _jobs(args: argparse.Namespace, config: RunConfig) -> int:
    return max(1, args.jobs if args.jobs is not None else config.jobs)


def cmd_normalize(args: argparse.Namespace, config: RunConfig) -> int:
    manifest_path = _require(args.manifest or config.data.manifest, "data.manifest")
    manifest = load_manifest(manifest_path)
    docs = list(iter_documents(manifest))
    jobs = _jobs(args, config)

    def work(raw):
        return normalize_document(raw, config.normalize)

    if jobs == 1:
        results = [work(doc) for doc in docs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, docs))

    out = _output_dir(config) / "normalized"
    out.mkdir(parents=True, exist_ok=True)
    report_lines: list[str] = []
    entries: list[ManifestEntry] = []
    for (doc, report), entry in zip(results, manifest.entries):
        report_lines.append(report.to_json())
        if report.flagged:
            continue
        name = entry.path.replace("/", "__").replace("\\", "__")
        body = doc.text + "\n"
        _write_text(out / name, body)
        entries.append(
            ManifestEntry(name, "utf-8", entry.context, len(body.encode("utf-8")))
        )
    _write_text(out / "report.jsonl", "\n".join(report_lines) + "\n")
    save_manifest(CorpusManifest(entries=tuple(entries), root=out), out / "manifest.tsv")
    _write_provenance(out, config, {"manifest": manifest_path})
    flagged = sum(1 for _, report in results if report.flagged)
    if flagged:
        print(f"{flagged} document(s) above the corruption threshold", file=sys.stderr)
        return EXIT_CORRUPT
    print(f"normalized {len(entries)} document(s) -> {out}")
    return EXIT_OK


def _manifest_texts(manifest: CorpusManifest) -> list[str]:
    texts = []
    for raw in iter_documents(manifest):
        encoding = raw.declared_encoding or detect_encoding(raw.data)
        texts.append(transcode(raw.data, encoding)[0])
    return texts


def cmd_tokenizer_train(args: argparse.Namespace, config: RunConfig) -> int:
    manifest_path = _require(
        args.input or config.data.normalized_manifest or config.data.manifest,
        "data.normalized_manifest",
    )
    manifest = load_manifest(manifest_path)
    texts = _manifest_texts(manifest)
    vocab_size = args.vocab_size or config.tokenizer.vocab_size
    model = train_bpe(texts, vocab_size, jobs=_jobs(args, config))
    out = Path(args.out) if args.out else _output_dir(config) / "tokenizer"
    save_tokenizer(model, out)
    _write_provenance(out, config, {"manifest": manifest_path})
    if model.vocab_size < vocab_size:
        print(f"corpus exhausted: vocab is {model.vocab_size}, not {vocab_size}")
    print(f"tokenizer with {model.vocab_size} tokens -> {out}")
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    tok = load_tokenizer(_require(config.data.tokenizer_dir, "data.tokenizer_dir"))
    manifest_path = _require(
        config.data.normalized_manifest or config.data.manifest,
        "data.normalized_manifest",
    )
    manifest = load_manifest(manifest_path)
    doc_ids = [encode(tok, text).ids for text in _manifest_texts(manifest)]
    packed = pack_sequences(doc_ids, tok.specials, max_len=config.model.max_positions)
    model = init_model(
        config.model.to_model_config(vocab_size=tok.vocab_size), seed=config.seed
    )
    pre_config = config.pretrain.to_config(seed=config.seed)

    dump = args.dump_masking or config.pretrain.dump_masking

    def on_batch(step: int, batch) -> None:
        if dump and step == 0:
            print(format_masked_batch(batch, tok.token_for_id))

    out = _output_dir(config) / "pretrained"
    result = pretrain(
        model,
        packed,
        config.masking,
        pre_config,
        tok.specials,
        out_dir=out,
        tokenizer_fingerprint=fingerprint(tok),
        on_batch=on_batch,
    )
    _write_text(
        out / "losses.tsv",
        "step\tloss\n" + "".join(f"{s}\t{v:.6f}\n" for s, v in result.losses),
    )
    _write_provenance(out, config, {"manifest": manifest_path})
    print(f"pretrained {pre_config.steps} steps on {len(packed)} rows -> {out}")
    return EXIT_OK


def _build_task(config: RunConfig, kind: str) -> NerTask | ClsTask:
    if kind == "ner":
        train = load_iob(_require(config.data.ner_train, "data.ner_train"))
        val = load_iob(_require(config.data.ner_val, "data.ner_val"))
        test = load_iob(_require(config.data.ner_test, "data.ner_test")) if config.data.ner_test else []
        return NerTask(train=train, val=val, test=test)
    hierarchy = load_hierarchy(_require(config.data.cls_hierarchy, "data.cls_hierarchy"))
    records = load_classification(
        _require(config.data.cls_records, "data.cls_records"), hierarchy
    )
    train, val, test = split(records, SplitSpec(seed=config.seed))
    return ClsTask(
        train=train,
        val=val,
        test=test,
        level=config.data.cls_level,
        labels=hierarchy.labels(config.data.cls_level),
    )


def _head_kwargs(task: NerTask | ClsTask) -> dict[str, int]:
    if task.kind == "ner":
        return {"num_tags": len(task.types.tags())}
    return {"num_labels": len(task.labels)}


def _task_inputs(config: RunConfig, kind: str) -> dict[str, Path]:
    if kind == "ner":
        inputs = {
            "ner_train": Path(config.data.ner_train),
            "ner_val": Path(config.data.ner_val),
        }
        if config.data.ner_test:
            inputs["ner_test"] = Path(config.data.ner_test)
        return inputs
    return {
        "cls_records": Path(config.data.cls_records),
        "cls_hierarchy": Path(config.data.cls_hierarchy),
    }


def cmd_finetune(args: argparse.Namespace, config: RunConfig) -> int:
    tok = load_tokenizer(_require(config.data.tokenizer_dir, "data.tokenizer_dir"))
    kind = config.finetune.task
    task = _build_task(config, kind)
    ckpt = _require(config.data.checkpoint_dir, "data.checkpoint_dir")
    out = _output_dir(config) / "runs" / kind
    for seed in config.finetune.seeds:
        model, _ = load_checkpoint(ckpt, head_seed=seed, **_head_kwargs(task))
        fin_config = config.finetune.to_config(seed)
        result = finetune(model, task, fin_config, tok)
        validation = result.final
        test = evaluate_task(model, task, tok, split="test") if task.test else validation
        run = RunResult(config=fin_config, seed=seed, validation=validation, test=test)
        run_dir = out / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        write_run_record(run_dir / "run.json", kind, fin_config, run, fingerprint(tok))
        _write_text(
            run_dir / "history.json",
            json.dumps(result.history, indent=2, sort_keys=True) + "\n",
        )
        save_checkpoint(
            model,
            run_dir / "model",
            tokenizer_fingerprint=fingerprint(tok),
            extra={"task": kind, "finetune": asdict(fin_config)},
        )
        print(f"seed {seed}: val {validation} -> {run_dir}")
    _write_provenance(out, config, _task_inputs(config, kind))
    return EXIT_OK


def cmd_grid_search(args: argparse.Namespace, config: RunConfig) -> int:
    tok = load_tokenizer(_require(config.data.tokenizer_dir, "data.tokenizer_dir"))
    kind = config.grid.task
    task = _build_task(config, kind)
    ckpt = _require(config.data.checkpoint_dir, "data.checkpoint_dir")
    head = _head_kwargs(task)

    def make_model():
        return load_checkpoint(ckpt, head_seed=config.grid.seed, **head)[0]

    result = grid_search(make_model, task, config.grid.to_spec(), config.grid.seed, tok)
    out = _output_dir(config) / "grid" / kind
    out.mkdir(parents=True, exist_ok=True)
    metric = task.selection_metric()
    _write_text(out / "grid_results.tsv", result.to_tsv(metric))
    _write_text(
        out / "best_config.json",
        json.dumps(asdict(result.best), indent=2, sort_keys=True) + "\n",
    )
    _write_provenance(out, config, _task_inputs(config, kind))
    best = result.best
    print(
        f"best: epochs={best.epochs} lr={best.learning_rate:g} batch={best.batch_size}"
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    tok = load_tokenizer(_require(config.data.tokenizer_dir, "data.tokenizer_dir"))
    kind = config.evaluate.task
    task = _build_task(config, kind)
    ckpt = _require(
        config.evaluate.checkpoint_dir or config.data.checkpoint_dir,
        "evaluate.checkpoint_dir",
    )
    model, _ = load_checkpoint(ckpt)
    if kind == "ner":
        need = len(task.types.tags())
        have = model.token_head.out_features if model.token_head is not None else None
        if have != need:
            raise HeadMismatchError(f"checkpoint token head is {have}, task needs {need}")
    else:
        need = len(task.labels)
        have = model.seq_head.out_features if model.seq_head is not None else None
        if have != need:
            raise HeadMismatchError(f"checkpoint sentence head is {have}, task needs {need}")

    data = getattr(task, config.evaluate.split)
    if not data:
        raise ConfigError(f"evaluate.split {config.evaluate.split!r} is empty")
    out = _output_dir(config) / "evaluation" / kind
    out.mkdir(parents=True, exist_ok=True)
    if kind == "ner":
        pred = predict_ner(model, data, tok, task.types)
        report = score_ner([s.tags for s in data], pred, task.types)
        _write_text(out / "report.tsv", render_ner_table(report))
        summary = report.summary()
    else:
        pred = predict_cls(model, data, tok, task.labels, task.level)
        report = score_classification([r.label(task.level) for r in data], pred)
        _write_text(out / "report.tsv", render_cls_table(report))
        summary = report.summary()
    _write_text(
        out / "metrics.json", json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    _write_provenance(out, config, _task_inputs(config, kind))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _collect_run_records(config: RunConfig) -> list[tuple[dict, RunResult]]:
    roots = [Path(p) for p in config.report.runs] or [_output_dir(config)]
    paths: list[Path] = []
    for root in roots:
        if root.is_file():
            paths.append(root)
        else:
            paths.extend(sorted(root.rglob("run.json")))
    records = []
    for path in paths:
        raw = json.loads(path.read_text(encoding="utf-8"))
        records.append((raw, load_run_record(path)))
    return records


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    records = _collect_run_records(config)
    if not records:
        raise ConfigError("no run records found to report on")
    groups: dict[tuple, list[tuple[dict, RunResult]]] = {}
    for raw, run in records:
        c = run.config
        key = (raw["task"], c.epochs, c.learning_rate, c.batch_size)
        groups.setdefault(key, []).append((raw, run))

    out = _output_dir(config) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    tables: dict[str, list[str]] = {}
    for key in sorted(groups, key=repr):
        kind = key[0]
        members = groups[key]
        runs = [run for _, run in members]
        label = f"epochs={key[1]} lr={key[2]:g} batch={key[3]}"
        columns = list(ner_columns()) if kind == "ner" else ["precision", "recall", "f1"]
        if kind not in tables:
            tables[kind] = ["config\tseeds\t" + "\t".join(columns)]
        if len(runs) >= 2:
            agg = aggregate_seeds(runs, split="test")
            cells = [
                format_mean_std(agg.mean[col], agg.std[col], 1) for col in columns
            ]
            seeds = ",".join(str(s) for s in agg.seeds)
        else:
            only = runs[0]
            cells = [f"{only.test[col]:.1f}" for col in columns]
            seeds = str(only.seed)
        tables[kind].append(label + "\t" + seeds + "\t" + "\t".join(cells))

    for kind, lines in tables.items():
        _write_text(out / f"{kind}_results.tsv", "\n".join(lines) + "\n")
        print(f"wrote {out / f'{kind}_results.tsv'}")
    return EXIT_OK


HANDLERS = {
    "normalize": cmd_normalize,
    "tokenizer-train": cmd_tokenizer_train,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "grid-search": cmd_grid_search,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greeklegal",
        description="Greek legal text pipeline: normalize, tokenize, pretrain, tune, score.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--jobs", type=int, default=None, help="worker count override")

    p = sub.add_parser("normalize", help="decode and normalize a raw corpus")
    common(p)
    p.add_argument("--manifest", help="corpus manifest (overrides config)")

    p = sub.add_parser("tokenizer-train", help="learn a byte-level BPE vocabulary")
    common(p)
    p.add_argument("--input", help="manifest of normalized text files")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--out", help="tokenizer output directory")

    p = sub.add_parser("pretrain", help="masked-language-model pretraining")
    common(p)
    p.add_argument(
        "--dump-masking",
        action="store_true",
        help="print the first masked batch in aligned columns",
    )

    for name, help_text in (
        ("finetune", "fine-tune a pretrained checkpoint on a task"),
        ("grid-search", "sweep epochs/lr/batch and pick the best by val metric"),
        ("evaluate", "score a tuned checkpoint on a data split"),
        ("report", "aggregate run records into result tables"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = RunConfig()
    try:
        if args.config:
            config = load_run_config(args.config)
        return HANDLERS[args.command](args, config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as err:
        print(f"error: missing file: {err}", file=sys.stderr)
        return EXIT_ERROR
    except HeadMismatchError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_HEAD_MISMATCH
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
