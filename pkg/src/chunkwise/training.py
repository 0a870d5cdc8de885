"""Training loop: Lookahead-wrapped AdamW with bias correction, linear
warm-up/decay schedule, gradient accumulation over micro-batches, per-epoch
chunk resampling, and early stopping on the dev weighted F-score.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chunking import EncodedChunk, SamplerConfig, length_features, sample_chunks
from .corpus import Document
from .model import ModelConfig, ModelParams, init_params, loss_and_gradients
from .tokenizer import Vocabulary
from . import chunking, evaluation

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainResult",
    "EarlyStopTracker",
    "lr_at",
    "adamw_step",
    "lookahead_step",
    "train",
    "write_training_log",
]

# rng substream tags (mixed into seed sequences, arbitrary but fixed)
_STREAM_EPOCH = 101
_STREAM_DEV = 202


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 35
    patience: int = 5
    lr: float = 2e-5
    warmup_ratio: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 8
    grad_accum: int = 4
    seed: int = 12
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self) -> None:
        if min(self.max_epochs, self.patience, self.batch_size, self.grad_accum,
               self.lookahead_k) < 1:
            raise ValueError("epoch/batch/accumulation/lookahead settings must be >= 1")
        if self.lr <= 0 or self.adam_eps <= 0:
            raise ValueError("lr and adam_eps must be positive")
        if not 0.0 < self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must be in (0,1)")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not 0.0 <= self.lookahead_alpha <= 1.0:
            raise ValueError("lookahead_alpha must be in [0,1]")


@dataclass
class TrainState:
    """Fast weights, Lookahead slow weights, AdamW moments, and progress."""

    params: ModelParams
    slow: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    best_score: float = -math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    log: list[dict] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: ModelParams) -> "TrainState":
        return cls(
            params=params,
            slow={k: t.copy() for k, t in params.items()},
            m=params.zeros_like(),
            v=params.zeros_like(),
        )


@dataclass
class TrainResult:
    params: ModelParams
    class_names: tuple[str, ...]
    best_dev_score: float
    best_epoch: int
    log: list[dict]


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear ramp 0 -> lr over the warm-up steps, then linear decay to 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = config.warmup_ratio * total_steps
    if step <= warmup:
        return config.lr * step / warmup
    return config.lr * (total_steps - step) / (total_steps - warmup)


def _decayed(name: str, tensor: np.ndarray) -> bool:
    # decoupled weight decay applies to matrices only, not biases or
    # layer-norm gains/offsets
    return tensor.ndim >= 2


def adamw_step(
    state: TrainState, grads: dict[str, np.ndarray], lr: float, config: TrainConfig
) -> None:
    """One AdamW update (bias-corrected, decoupled decay) on the fast weights."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name!r}; aborting step")
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    for name, tensor in state.params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        update = m_hat / (np.sqrt(v_hat) + config.adam_eps)
        if config.weight_decay > 0.0 and _decayed(name, tensor):
            update = update + config.weight_decay * tensor
        tensor -= lr * update


def lookahead_step(state: TrainState, config: TrainConfig) -> None:
    """Every k fast steps: slow += alpha * (fast - slow); fast <- slow."""
    if state.step % config.lookahead_k != 0:
        return
    alpha = config.lookahead_alpha
    for name, tensor in state.params.items():
        slow = state.slow[name]
        slow += alpha * (tensor - slow)
        tensor[...] = slow


class EarlyStopTracker:
    """Stop after ``patience`` epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best:
            self.best = score
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def steps_per_epoch(n_docs: int, config: TrainConfig) -> int:
    return math.ceil(n_docs / (config.batch_size * config.grad_accum))


def _prepare(
    docs: Sequence[Document],
    vocab: Vocabulary,
    model_config: ModelConfig,
    sampler: SamplerConfig,
    label_to_id: dict[str, int],
) -> list[tuple[str, list[EncodedChunk], chunking.FeatureVector, int]]:
    """Encode every document once; sampling re-draws from these chunk lists."""
    prepared = []
    for doc in sorted(docs, key=lambda d: d.id):
        if doc.label is None:
            raise ValueError(f"document {doc.id!r} is unlabeled")
        chunks = chunking.encode_document(doc, vocab, sampler)
        if not chunks:
            raise ValueError(f"document {doc.id!r} yielded no chunks")
        feats = length_features(doc, model_config.feature_names)
        prepared.append((doc.id, chunks, feats, label_to_id[doc.label]))
    return prepared


def train(
    model_config: ModelConfig,
    vocab: Vocabulary,
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Full training run; returns the best checkpoint by dev weighted F-score.

    Each epoch re-samples every training document's chunks from a fresh
    epoch-derived rng substream and walks the documents in shuffled order,
    accumulating gradients over ``grad_accum`` micro-batches of
    ``batch_size`` documents per optimizer step. The dev score uses a single
    fixed-seed resample per epoch.
    """
    if not train_docs or not dev_docs:
        raise ValueError("train and dev corpora must be non-empty")
    class_names = tuple(sorted({d.label for d in list(train_docs) + list(dev_docs) if d.label}))
    if len(class_names) != model_config.n_classes:
        raise ValueError(
            f"model configured for {model_config.n_classes} classes but corpus "
            f"has {len(class_names)}"
        )
    label_to_id = {name: i for i, name in enumerate(class_names)}

    sampler = config.sampler
    prepared = _prepare(train_docs, vocab, model_config, sampler, label_to_id)
    state = TrainState.fresh(init_params(model_config, seed=config.seed))
    tracker = EarlyStopTracker(config.patience)
    best_params = state.params.copy()

    total_steps = config.max_epochs * steps_per_epoch(len(prepared), config)
    group_size = config.batch_size * config.grad_accum

    for epoch in range(1, config.max_epochs + 1):
        epoch_start = time.perf_counter()
        rng = np.random.default_rng([config.seed, _STREAM_EPOCH, epoch])
        samples = [
            sample_chunks(chunks, sampler, rng, features=feats, label=label)
            for _, chunks, feats, label in prepared
        ]
        order = rng.permutation(len(samples))

        epoch_loss = 0.0
        accum = state.params.zeros_like()
        accum_count = 0
        last_lr = 0.0
        for pos, idx in enumerate(order):
            sample = samples[idx]
            loss, grads = loss_and_gradients(
                sample, sample.label, state.params, mode="train", rng=rng
            )
            epoch_loss += loss
            for name in accum:
                accum[name] += grads[name]
            accum_count += 1
            if accum_count == group_size or pos == len(order) - 1:
                for name in accum:
                    accum[name] /= accum_count
                last_lr = lr_at(min(state.step + 1, total_steps), total_steps, config)
                adamw_step(state, accum, last_lr, config)
                lookahead_step(state, config)
                accum = state.params.zeros_like()
                accum_count = 0

        dev_score = _dev_weighted_f(
            dev_docs, vocab, state.params, sampler, class_names, config
        )
        improved = tracker.update(epoch, dev_score)
        if improved:
            best_params = state.params.copy()
        state.log.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / len(prepared),
                "dev_weighted_f": dev_score,
                "lr": last_lr,
                "wall_time": time.perf_counter() - epoch_start,
            }
        )
        if tracker.should_stop:
            break

    return TrainResult(
        params=best_params,
        class_names=class_names,
        best_dev_score=tracker.best,
        best_epoch=tracker.best_epoch,
        log=state.log,
    )


def _dev_weighted_f(
    dev_docs: Sequence[Document],
    vocab: Vocabulary,
    params: ModelParams,
    sampler: SamplerConfig,
    class_names: tuple[str, ...],
    config: TrainConfig,
) -> float:
    rng = np.random.default_rng([config.seed, _STREAM_DEV])
    y_true: list[str] = []
    y_pred: list[str] = []
    for doc in sorted(dev_docs, key=lambda d: d.id):
        label = evaluation.predict_label(doc, params, vocab, sampler, class_names, rng)
        y_true.append(doc.label)
        y_pred.append(label)
    cm = evaluation.ConfusionMatrix.from_pairs(y_true, y_pred, labels=class_names)
    return evaluation.weighted_f(cm)


def write_training_log(log: Sequence[dict], path: str | Path) -> None:
    """Training log as JSONL: one epoch record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")
