#!/usr/bin/env python3
"""End-to-end demo: generate a corpus, train a small model, classify a
directory through the durable pipeline (including an injected worker crash),
and time a few benchmark runs.

Usage:
    python scripts/run_pipeline_demo.py [--workdir DIR]
"""

from __future__ import annotations

import argparse
import tempfile
import time
from pathlib import Path

from chunkwise import corpus, pipeline, tokenizer, training
from chunkwise.chunking import SamplerConfig
from chunkwise.corpus import SplitSpec
from chunkwise.durable import Client
from chunkwise.model import ModelConfig
from chunkwise.pipeline import (
    ACT_CLASSIFY,
    BatchState,
    ModelBundle,
    PipelineConfig,
    PredictionSink,
    bench_pipeline,
    bench_table,
    make_classify_worker,
    make_io_worker,
    run_pipeline,
    setup_engine,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default=None)
    parser.add_argument("--seed", type=int, default=12)
    args = parser.parse_args()
    workdir = Path(args.workdir or tempfile.mkdtemp(prefix="chunkwise-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)

    print("== generating corpus ==")
    docs = corpus.generate_corpus(4, 40, seed=args.seed)
    train_docs, dev_docs, test_docs = corpus.split_corpus(docs, SplitSpec(seed=args.seed))
    vocab = tokenizer.build_vocab(p for d in train_docs for p in d.paragraphs)

    print("== training a small model ==")
    sampler = SamplerConfig(sample_size=20, seed=args.seed)
    model_config = ModelConfig(
        vocab_size=vocab.size, n_classes=4, embed_dim=32, encoder_layers=1,
        encoder_heads=2, encoder_ff_dim=64, lstm_hidden=64,
        feature_names=("nc", "np", "app"), dropout=0.5,
    )
    train_config = training.TrainConfig(lr=3e-3, max_epochs=20, patience=6,
                                        seed=args.seed, sampler=sampler)
    result = training.train(model_config, vocab, train_docs, dev_docs, train_config)
    print(f"best dev weighted F {result.best_dev_score:.3f} at epoch {result.best_epoch}")

    bundle = ModelBundle(params=result.params, vocab=vocab,
                         class_names=result.class_names, sampler=sampler)

    print("== running the pipeline with an injected worker crash ==")
    input_dir = workdir / "inbox"
    corpus.write_document_files(test_docs, input_dir)
    (input_dir / "broken.json").write_text("{ not json")

    engine = setup_engine()
    sink = PredictionSink()
    config = PipelineConfig(initial_backoff=0.05)
    io_worker = make_io_worker(engine, sink, config, worker_id="io-1").start()
    victim = make_classify_worker(engine, bundle, worker_id="classify-1").start()

    engine.faults.hold_activity(ACT_CLASSIFY)
    client = Client(engine)
    wf_id = run_pipeline(engine, input_dir, seed=args.seed, wait=False)
    while not any(r.name == ACT_CLASSIFY for r in engine.execution_ledger()):
        time.sleep(0.01)
    print("killing the classification worker mid-activity...")
    victim.kill()
    replacement = make_classify_worker(engine, bundle, worker_id="classify-2").start()
    engine.faults.release_activity(ACT_CLASSIFY)

    state = BatchState.from_result(client.get_result(wf_id, timeout=300))
    print(f"discovered {state.discovered}, predicted {state.predicted}, "
          f"skipped {len(state.skips)}")
    for skip in state.skips:
        print(f"  skipped {skip['path']}: {skip['kind']}")
    predictions_path = workdir / "predictions.jsonl"
    sink.write_jsonl(predictions_path)
    print(f"predictions -> {predictions_path}")

    history = client.get_history(wf_id)
    print(f"w2 history: {[e.kind for e in history.events]}")
    io_worker.shutdown()
    replacement.shutdown()

    print("== benchmark (5 runs x 20 documents) ==")
    report = bench_pipeline(docs, bundle, n_docs=20, n_runs=5,
                            base_seed=args.seed, pipeline_config=config)
    print(bench_table(report))


if __name__ == "__main__":
    main()
