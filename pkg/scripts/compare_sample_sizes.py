#!/usr/bin/env python3
"""Train classifiers with several chunk sample sizes on a synthetic corpus
and report each model's test weighted F-score distribution over 30 runs.

Usage:
    python scripts/compare_sample_sizes.py [--sizes 20 48 62] [--docs-per-class 100]
"""

from __future__ import annotations

import argparse
import time

from chunkwise import corpus, evaluation, tokenizer, training
from chunkwise.chunking import SamplerConfig
from chunkwise.corpus import SplitSpec
from chunkwise.model import ModelConfig


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[20, 48, 62])
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--docs-per-class", type=int, default=100)
    parser.add_argument("--seed", type=int, default=12)
    parser.add_argument("--lr", type=float, default=2e-3,
                        help="from-scratch training needs a larger rate than "
                        "fine-tuning defaults")
    parser.add_argument("--runs", type=int, default=30)
    parser.add_argument("--features", default="nc,np,app")
    args = parser.parse_args()

    docs = corpus.generate_corpus(args.classes, args.docs_per_class, seed=args.seed)
    train_docs, dev_docs, test_docs = corpus.split_corpus(docs, SplitSpec(seed=args.seed))
    vocab = tokenizer.build_vocab(p for d in train_docs for p in d.paragraphs)
    features = tuple(f for f in args.features.split(",") if f)

    rows = []
    for size in args.sizes:
        sampler = SamplerConfig(sample_size=size, seed=args.seed)
        model_config = ModelConfig(
            vocab_size=vocab.size, n_classes=args.classes, embed_dim=32,
            encoder_layers=1, encoder_heads=2, encoder_ff_dim=64,
            lstm_hidden=128, feature_names=features, dropout=0.5,
        )
        train_config = training.TrainConfig(lr=args.lr, seed=args.seed, sampler=sampler)
        started = time.perf_counter()
        result = training.train(model_config, vocab, train_docs, dev_docs, train_config)
        elapsed = time.perf_counter() - started
        print(
            f"sample {size}: {len(result.log)} epochs in {elapsed:.0f}s, "
            f"best dev {result.best_dev_score:.4f} (epoch {result.best_epoch})"
        )
        eval_result = evaluation.evaluate_runs(
            result.params, vocab, test_docs, sampler, result.class_names,
            n_runs=args.runs, base_seed=args.seed,
        )
        label = f"{size} {'+'.join(features) or '-'}"
        rows.append((label, result.best_dev_score, eval_result.distribution))

    print()
    print(evaluation.distribution_table(rows))


if __name__ == "__main__":
    main()
