"""Command-line entry point: corpus tools, training, evaluation, direct
classification, worker hosting, pipeline execution, and the timing benchmark.

Configuration comes from an optional TOML file plus flag overrides; the
hyperparameter defaults checked in here are the training-table values. Log
level is controlled by the CHUNKWISE_LOG environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import corpus, evaluation, pipeline, tokenizer, training
from .chunking import SamplerConfig
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .tokenizer import TokenizerConfig

log = logging.getLogger("chunkwise")


def _load_toml(path: str | Path) -> dict:
    try:
        import tomllib  # py311+
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(Path(path).read_text(encoding="utf-8"))


def _parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _apply_overrides(cls, base: dict, overrides: dict) -> dict:
    valid = {f.name for f in dataclasses.fields(cls)}
    merged = dict(base)
    for key, value in overrides.items():
        if key not in valid:
            raise SystemExit(f"unknown {cls.__name__} option {key!r}")
        merged[key] = value
    return merged


def _load_corpus_or_die(path: Path) -> list[corpus.Document]:
    if not path.exists():
        raise SystemExit(f"corpus file {path} not found")
    docs, problems = corpus.load_corpus(path)
    for problem in problems:
        log.warning("skipping record: %s", problem)
    if not docs:
        raise SystemExit(f"no valid documents in {path}")
    return docs


# ---------------------------------------------------------------------------
# Subcommands

def cmd_gen_corpus(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    docs = corpus.generate_corpus(args.classes, args.docs_per_class, seed=args.seed)
    spec = corpus.SplitSpec(seed=args.seed)
    train_docs, dev_docs, test_docs = corpus.split_corpus(docs, spec)
    for name, split in (("train", train_docs), ("dev", dev_docs), ("test", test_docs)):
        corpus.save_corpus(split, out / f"{name}.jsonl")
    if args.files_dir:
        paths = corpus.write_document_files(docs, args.files_dir)
        print(f"wrote {len(paths)} document files to {args.files_dir}")
    print(f"wrote {len(train_docs)}/{len(dev_docs)}/{len(test_docs)} documents to {out}")
    print(corpus.stats_table(corpus.corpus_stats(docs)))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config_data = _load_toml(args.config) if args.config else {}
    overrides = dict(args.set or ())

    sampler_data = dict(config_data.get("sampler", {}))
    if args.sample_size is not None:
        sampler_data["sample_size"] = args.sample_size
    if args.seed is not None:
        sampler_data["seed"] = args.seed
    sampler = SamplerConfig(**_apply_overrides(SamplerConfig, {}, sampler_data))

    train_data = dict(config_data.get("train", {}))
    if args.seed is not None:
        train_data["seed"] = args.seed
    train_data = _apply_overrides(training.TrainConfig, train_data, overrides)
    train_config = training.TrainConfig(sampler=sampler, **train_data)

    corpus_dir = Path(args.corpus_dir)
    train_docs = _load_corpus_or_die(corpus_dir / "train.jsonl")
    dev_docs = _load_corpus_or_die(corpus_dir / "dev.jsonl")
    class_names = sorted({d.label for d in train_docs + dev_docs if d.label})

    tok_data = dict(config_data.get("tokenizer", {}))
    tok_config = TokenizerConfig(**_apply_overrides(TokenizerConfig, {}, tok_data))
    vocab = tokenizer.build_vocab(
        (p for d in train_docs for p in d.paragraphs), tok_config
    )

    model_data = dict(config_data.get("model", {}))
    if args.features is not None:
        model_data["feature_names"] = tuple(f for f in args.features.split(",") if f)
    model_data.setdefault("feature_names", ("nc", "np", "app"))
    model_data["feature_names"] = tuple(model_data["feature_names"])
    model_data["vocab_size"] = vocab.size
    model_data["n_classes"] = len(class_names)
    model_data["max_chunk_len"] = sampler.max_chunk_len
    model_config = ModelConfig(**_apply_overrides(ModelConfig, {}, model_data))

    log.info(
        "training: %d train docs, %d dev docs, %d classes, sample size %d, lr %g",
        len(train_docs), len(dev_docs), len(class_names),
        sampler.sample_size, train_config.lr,
    )
    started = time.perf_counter()
    result = training.train(model_config, vocab, train_docs, dev_docs, train_config)
    elapsed = time.perf_counter() - started

    save_checkpoint(args.out, result.params, vocab, result.class_names)
    if args.log_out:
        training.write_training_log(result.log, args.log_out)
    print(
        f"best dev weighted F {result.best_dev_score:.4f} at epoch "
        f"{result.best_epoch} ({len(result.log)} epochs, {elapsed:.1f}s); "
        f"checkpoint -> {args.out}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    params, vocab, class_names = load_checkpoint(args.checkpoint)
    docs = _load_corpus_or_die(Path(args.corpus))
    unlabeled = [d.id for d in docs if d.label is None]
    if unlabeled:
        raise SystemExit(f"corpus has unlabeled documents, e.g. {unlabeled[0]!r}")
    sampler = SamplerConfig(
        sample_size=args.sample_size if args.sample_size else SamplerConfig().sample_size
    )
    result = evaluation.evaluate_runs(
        params, vocab, docs, sampler, class_names,
        n_runs=args.runs, base_seed=args.base_seed,
    )
    label = f"{sampler.sample_size} {'+'.join(params.config.feature_names) or '-'}"
    print(evaluation.distribution_table([(label, None, result.distribution)]))
    print()
    print(evaluation.per_class_table(result.per_class_median, result.supports))
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(result.to_json_dict(), indent=2), encoding="utf-8"
        )
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    params, vocab, class_names = load_checkpoint(args.checkpoint)
    bundle = pipeline.ModelBundle(
        params=params, vocab=vocab, class_names=tuple(class_names),
        sampler=SamplerConfig(),
    )
    target = Path(args.input)
    if target.is_dir():
        paths = sorted(
            p for p in target.rglob("*") if p.is_file() and p.suffix in (".json", ".jsonl")
        )
    else:
        paths = [target]

    out_fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    successes = 0
    failures = 0
    try:
        for path in paths:
            try:
                record = pipeline._activity_read_validate({"path": str(path)})
                doc = corpus.validate_document(record)
                assert isinstance(doc, corpus.Document)
                pred = bundle.predict(doc, args.seed)
            except Exception as exc:
                failures += 1
                print(f"{path}: {exc}", file=sys.stderr)
                continue
            successes += 1
            out_fh.write(json.dumps(pred.to_json_dict()) + "\n")
    finally:
        if args.out:
            out_fh.close()
    # soft per-file failures keep exit 0 as long as something succeeded
    return 0 if successes > 0 else 1


def cmd_worker(args: argparse.Namespace) -> int:
    from .durable import EngineConfig, UnknownQueueError, build_engine, load_engine_config

    engine_config = (
        load_engine_config(args.engine_config) if args.engine_config else EngineConfig()
    )
    engine = build_engine(engine_config)
    if args.role == "classify":
        if not args.checkpoint:
            raise SystemExit("classify role requires --checkpoint")
        queue = args.queue or pipeline.Q_CLASSIFY
        bundle = pipeline.ModelBundle.from_checkpoint(args.checkpoint)
        worker = pipeline.make_classify_worker(
            engine, bundle, queue=queue,
            max_concurrent=engine_config.worker_limits.get(queue, 2),
        )
    else:
        queue = args.queue or pipeline.Q_IO
        sink = pipeline.PredictionSink()
        worker = pipeline.make_io_worker(
            engine, sink, queue=queue,
            max_concurrent=engine_config.worker_limits.get(queue, 4),
        )
    try:
        worker.start()
    except UnknownQueueError as exc:
        raise SystemExit(str(exc))
    print(f"worker {worker.worker_id} polling queue {queue!r} as role "
          f"{args.role!r} (in-process engine; ctrl-c to stop)")
    try:
        if args.run_seconds is not None:
            time.sleep(args.run_seconds)
        else:
            while True:
                time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    worker.shutdown()
    return 0


def _make_pipeline_host(checkpoint: str, config: pipeline.PipelineConfig):
    bundle = pipeline.ModelBundle.from_checkpoint(checkpoint)
    engine = pipeline.setup_engine()
    sink = pipeline.PredictionSink()
    io_worker = pipeline.make_io_worker(engine, sink, config).start()
    cls_worker = pipeline.make_classify_worker(engine, bundle).start()
    return engine, sink, (io_worker, cls_worker)


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = pipeline.PipelineConfig()
    engine, sink, workers = _make_pipeline_host(args.checkpoint, config)
    try:
        if args.mode == "submit":
            workflow_id = pipeline.run_pipeline(engine, args.dir, args.seed, wait=False)
            print(f"workflow id: {workflow_id}")
            # the engine lives in this process, so stay up until the work is done
            result = engine.get_result(workflow_id, timeout=args.timeout)
            state = pipeline.BatchState.from_result(result)
        else:
            state = pipeline.run_pipeline(engine, args.dir, args.seed, timeout=args.timeout)
        if args.out:
            sink.write_jsonl(args.out)
        print(
            f"discovered {state.discovered}, predicted {state.predicted}, "
            f"skipped {len(state.skips)}"
        )
        for skip in state.skips:
            print(f"  skipped {skip['path']}: {skip['kind']}: {skip['message']}",
                  file=sys.stderr)
    finally:
        for worker in workers:
            worker.shutdown()
    return 0 if state.predicted > 0 or state.discovered == 0 else 1


def cmd_bench(args: argparse.Namespace) -> int:
    docs = _load_corpus_or_die(Path(args.corpus))
    bundle = pipeline.ModelBundle.from_checkpoint(args.checkpoint)
    report = pipeline.bench_pipeline(
        docs, bundle, n_docs=args.n_docs, n_runs=args.runs, base_seed=args.seed
    )
    print(pipeline.bench_table(report))
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(report.to_json_dict(), indent=2), encoding="utf-8"
        )
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkwise",
        description="Long-document classification from sampled chunks, with a "
        "durable processing pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True, help="output directory for split JSONL files")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--docs-per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=12)
    p.add_argument("--files-dir", help="also write one JSON file per document here")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--corpus-dir", required=True,
                   help="directory containing train.jsonl and dev.jsonl")
    p.add_argument("--out", required=True, help="checkpoint output path (.npz)")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sample-size", type=int, default=None, choices=None,
                   help="chunks sampled per document (e.g. 20, 48, 62)")
    p.add_argument("--features", default=None,
                   help="comma-separated subset of nc,np,app (empty for none)")
    p.add_argument("--set", type=_parse_override, action="append", metavar="KEY=VALUE",
                   help="override any training option")
    p.add_argument("--log-out", help="write the per-epoch training log (JSONL)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="multi-run evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="labeled JSONL corpus")
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--base-seed", type=int, default=12)
    p.add_argument("--sample-size", type=int, default=None)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", help="engine-free classification of files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="document file or directory")
    p.add_argument("--seed", type=int, default=12)
    p.add_argument("--out", help="predictions JSONL (default stdout)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("worker", help="host one worker on the in-process engine")
    p.add_argument("--role", required=True, choices=["io", "classify"])
    p.add_argument("--queue", default=None,
                   help="queue to poll (default: the role's standard queue)")
    p.add_argument("--checkpoint", help="model checkpoint (classify role)")
    p.add_argument("--engine-config", help="engine config file (.json or .toml)")
    p.add_argument("--run-seconds", type=float, default=None,
                   help="exit after this many seconds (default: run forever)")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("pipeline", help="classify a directory through the engine")
    p.add_argument("--dir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=12)
    p.add_argument("--mode", choices=["wait", "submit"], default="wait")
    p.add_argument("--out", help="write predictions JSONL here")
    p.add_argument("--timeout", type=float, default=600.0)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("bench", help="time the pipeline end to end")
    p.add_argument("--corpus", required=True, help="labeled JSONL corpus to sample from")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--n-docs", type=int, default=100)
    p.add_argument("--seed", type=int, default=12)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("CHUNKWISE_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
