"""The classification pipeline on the durable engine.

Three core activities: file discovery and document read/validate run on the
I/O queue; chunk encoding plus inference happen together in one activity on
the dedicated classification queue (splitting them would just serialize
tensors into payloads and parse them back). A batch workflow processes ten
documents per run and chains itself via continue-as-new to keep each run's
event history small; a directory workflow discovers files and delegates to
the batch workflow as a child.

Per-document failures (missing file, malformed JSON, schema violations,
empty encodings) are non-retryable: they consume one attempt and are
recorded as skips without failing the workflow. Worker deaths and transient
I/O errors are retried per policy.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import chunking, corpus, evaluation
from .chunking import SamplerConfig, length_features, sample_chunks
from .corpus import Document, ValidationFailure
from .durable import (
    ActivityError,
    ActivityFailure,
    Engine,
    RetryPolicy,
    Worker,
    WorkerConfig,
    WorkflowContext,
)
from .model import ModelParams, classify, load_checkpoint

__all__ = [
    "Q_IO",
    "Q_CLASSIFY",
    "BATCH_SIZE",
    "NON_RETRYABLE_KINDS",
    "WF_CLASSIFY_DIRECTORY",
    "WF_CLASSIFY_BATCH",
    "ACT_FIND_FILES",
    "ACT_READ_VALIDATE",
    "ACT_CLASSIFY",
    "ACT_STORE_PREDICTIONS",
    "Prediction",
    "PredictionSink",
    "ModelBundle",
    "PipelineConfig",
    "BatchState",
    "document_seed",
    "make_io_worker",
    "make_classify_worker",
    "run_pipeline",
    "BenchReport",
    "bench_pipeline",
    "bench_table",
]

Q_IO = "io"
Q_CLASSIFY = "classify"
BATCH_SIZE = 10

WF_CLASSIFY_DIRECTORY = "classify_directory"
WF_CLASSIFY_BATCH = "classify_batch"
ACT_FIND_FILES = "find_files"
ACT_READ_VALIDATE = "read_validate"
ACT_CLASSIFY = "classify_document"
ACT_STORE_PREDICTIONS = "store_predictions"

NON_RETRYABLE_KINDS = frozenset(
    {"not-found", "malformed-json", "schema-invalid", "empty-document",
     "payload-too-large"}
)

MODEL_VERSION = "chunkwise-0.1"


@dataclass(frozen=True)
class PipelineConfig:
    """Retry behavior of the pipeline's activities."""

    max_attempts: int = 3
    initial_backoff: float = 0.05
    backoff_multiplier: float = 2.0

    @property
    def retry_policy(self) -> RetryPolicy:
        return RetryPolicy(
            max_attempts=self.max_attempts,
            initial_backoff=self.initial_backoff,
            backoff_multiplier=self.backoff_multiplier,
            non_retryable_error_kinds=NON_RETRYABLE_KINDS,
        )


@dataclass(frozen=True)
class Prediction:
    doc_id: str
    label: str
    probabilities: tuple[float, ...]
    model_version: str
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "label": self.label,
            "probabilities": list(self.probabilities),
            "model_version": self.model_version,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Prediction":
        return cls(
            doc_id=data["doc_id"],
            label=data["label"],
            probabilities=tuple(data["probabilities"]),
            model_version=data["model_version"],
            seed=data["seed"],
        )


class PredictionSink:
    """Thread-safe prediction store keyed by document id, so repeated writes
    of the same result (activity retries) stay idempotent."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._predictions: dict[str, Prediction] = {}

    def add_many(self, predictions: Sequence[Prediction]) -> int:
        with self._lock:
            for pred in predictions:
                self._predictions[pred.doc_id] = pred
            return len(self._predictions)

    def snapshot(self) -> dict[str, Prediction]:
        with self._lock:
            return dict(self._predictions)

    def __len__(self) -> int:
        with self._lock:
            return len(self._predictions)

    def write_jsonl(self, path: str | Path) -> None:
        with self._lock:
            items = sorted(self._predictions.items())
        with open(path, "w", encoding="utf-8") as fh:
            for _, pred in items:
                fh.write(json.dumps(pred.to_json_dict()) + "\n")


def document_seed(pipeline_seed: int, doc_id: str) -> int:
    """Stable per-document sampling seed, independent of worker assignment
    and retry count."""
    digest = hashlib.sha256(f"{pipeline_seed}:{doc_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class ModelBundle:
    """Everything the classification worker loads once at startup."""

    params: ModelParams
    vocab: Any
    class_names: tuple[str, ...]
    sampler: SamplerConfig

    @classmethod
    def from_checkpoint(cls, path: str | Path, sampler: SamplerConfig | None = None) -> "ModelBundle":
        params, vocab, class_names = load_checkpoint(path)
        return cls(
            params=params,
            vocab=vocab,
            class_names=tuple(class_names),
            sampler=sampler or SamplerConfig(),
        )

    def predict(self, doc: Document, pipeline_seed: int) -> Prediction:
        chunks = chunking.encode_document(doc, self.vocab, self.sampler)
        if not chunks:
            raise ActivityError("empty-document", f"document {doc.id!r} yielded no chunks")
        rng = np.random.default_rng(document_seed(pipeline_seed, doc.id))
        feats = length_features(doc, self.params.config.feature_names)
        sample = sample_chunks(chunks, self.sampler, rng, features=feats)
        probs, _ = classify(sample, self.params, mode="eval")
        return Prediction(
            doc_id=doc.id,
            label=self.class_names[int(np.argmax(probs))],
            probabilities=tuple(float(p) for p in probs),
            model_version=MODEL_VERSION,
            seed=pipeline_seed,
        )


# ---------------------------------------------------------------------------
# Activities

def _activity_find_files(value: dict) -> list[str]:
    directory = Path(value["dir"])
    if not directory.is_dir():
        raise ActivityError("not-found", f"directory {directory} does not exist")
    paths = [
        str(p)
        for p in directory.rglob("*")
        if p.is_file() and p.suffix in (".json", ".jsonl")
    ]
    return sorted(paths)


def _activity_read_validate(value: dict) -> dict:
    path = Path(value["path"])
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ActivityError("not-found", str(exc)) from exc
    except OSError as exc:
        # permissions, transient I/O: retryable
        raise ActivityError("io-transient", str(exc)) from exc
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) != 1:
        raise ActivityError(
            "malformed-json", f"{path} must contain exactly one JSON document"
        )
    try:
        record = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ActivityError("malformed-json", f"{path}: {exc}") from exc
    if not isinstance(record, dict):
        raise ActivityError("malformed-json", f"{path}: not a JSON object")
    result = corpus.validate_document(record)
    if isinstance(result, ValidationFailure):
        raise ActivityError("schema-invalid", f"{path}: {result.message}")
    return corpus.document_to_record(result)


def make_classify_activity(bundle: ModelBundle) -> Callable[[dict], dict]:
    def _activity_classify(value: dict) -> dict:
        result = corpus.validate_document(value["document"])
        if isinstance(result, ValidationFailure):
            raise ActivityError("schema-invalid", result.message)
        prediction = bundle.predict(result, int(value["seed"]))
        return prediction.to_json_dict()

    return _activity_classify


def make_store_activity(sink: PredictionSink) -> Callable[[dict], int]:
    def _activity_store(value: dict) -> int:
        predictions = [Prediction.from_json_dict(p) for p in value["predictions"]]
        return sink.add_many(predictions)

    return _activity_store


# ---------------------------------------------------------------------------
# Workflows

def _failure_skip(path_or_id: str, failure: ActivityFailure) -> dict:
    return {"path": path_or_id, "kind": failure.kind, "message": failure.message}


def make_batch_workflow(config: PipelineConfig) -> Callable[[WorkflowContext, dict], dict]:
    """Process up to BATCH_SIZE paths per run, then continue-as-new with the
    remainder; carries only counters and skip records between runs."""
    policy = config.retry_policy

    def classify_batch(ctx: WorkflowContext, state: dict) -> dict:
        paths: list[str] = list(state["paths"])
        seed = int(state["seed"])
        predicted = int(state.get("predicted", 0))
        skips: list[dict] = list(state.get("skips", []))

        batch, remaining = paths[:BATCH_SIZE], paths[BATCH_SIZE:]
        predictions: list[dict] = []
        for path in batch:
            doc = ctx.execute_activity(
                ACT_READ_VALIDATE, {"path": path}, queue=Q_IO, retry_policy=policy
            )
            if isinstance(doc, ActivityFailure):
                skips.append(_failure_skip(path, doc))
                continue
            pred = ctx.execute_activity(
                ACT_CLASSIFY,
                {"document": doc, "seed": seed},
                queue=Q_CLASSIFY,
                retry_policy=policy,
            )
            if isinstance(pred, ActivityFailure):
                skips.append(_failure_skip(path, pred))
                continue
            predictions.append(pred)

        if predictions:
            stored = ctx.execute_activity(
                ACT_STORE_PREDICTIONS,
                {"predictions": predictions},
                queue=Q_IO,
                retry_policy=policy,
            )
            if isinstance(stored, ActivityFailure):
                raise RuntimeError(
                    f"could not store predictions: {stored.kind}: {stored.message}"
                )
            predicted += len(predictions)

        if remaining:
            ctx.continue_as_new(
                {"paths": remaining, "seed": seed, "predicted": predicted, "skips": skips}
            )
        return {"predicted": predicted, "skips": skips, "remaining": 0}

    return classify_batch


def make_directory_workflow(config: PipelineConfig) -> Callable[[WorkflowContext, dict], dict]:
    """Discover files, then delegate to the batch workflow as a child and
    return its final state."""
    policy = config.retry_policy

    def classify_directory(ctx: WorkflowContext, value: dict) -> dict:
        files = ctx.execute_activity(
            ACT_FIND_FILES, {"dir": value["dir"]}, queue=Q_IO, retry_policy=policy
        )
        if isinstance(files, ActivityFailure):
            raise RuntimeError(f"file discovery failed: {files.kind}: {files.message}")
        if not files:
            return {"discovered": 0, "predicted": 0, "skips": []}
        final = ctx.execute_child_workflow(
            WF_CLASSIFY_BATCH,
            {"paths": files, "seed": int(value["seed"])},
            queue=Q_IO,
        )
        return {
            "discovered": len(files),
            "predicted": final["predicted"],
            "skips": final["skips"],
        }

    return classify_directory


@dataclass(frozen=True)
class BatchState:
    """Host-side summary of a finished pipeline execution."""

    discovered: int
    predicted: int
    skips: tuple[dict, ...]

    @classmethod
    def from_result(cls, result: dict) -> "BatchState":
        return cls(
            discovered=int(result["discovered"]),
            predicted=int(result["predicted"]),
            skips=tuple(result["skips"]),
        )


# ---------------------------------------------------------------------------
# Worker wiring

def make_io_worker(
    engine: Engine,
    sink: PredictionSink,
    config: PipelineConfig = PipelineConfig(),
    max_concurrent: int = 4,
    worker_id: str | None = None,
    queue: str = Q_IO,
) -> Worker:
    """Worker for the I/O queue: discovery, validation, result storage, and
    both workflows."""
    return Worker(
        engine,
        WorkerConfig(
            queue=queue,
            activities={
                ACT_FIND_FILES: _activity_find_files,
                ACT_READ_VALIDATE: _activity_read_validate,
                ACT_STORE_PREDICTIONS: make_store_activity(sink),
            },
            workflows={
                WF_CLASSIFY_BATCH: make_batch_workflow(config),
                WF_CLASSIFY_DIRECTORY: make_directory_workflow(config),
            },
            max_concurrent=max_concurrent,
            worker_id=worker_id,
        ),
    )


def make_classify_worker(
    engine: Engine,
    bundle: ModelBundle,
    max_concurrent: int = 2,
    worker_id: str | None = None,
    queue: str = Q_CLASSIFY,
) -> Worker:
    """Worker for the classification queue: runs only the inference activity;
    the model is loaded once at construction, not per task."""
    return Worker(
        engine,
        WorkerConfig(
            queue=queue,
            activities={ACT_CLASSIFY: make_classify_activity(bundle)},
            max_concurrent=max_concurrent,
            worker_id=worker_id,
        ),
    )


def setup_engine(engine: Engine | None = None) -> Engine:
    engine = engine or Engine()
    engine.create_queue(Q_IO)
    engine.create_queue(Q_CLASSIFY)
    return engine


def run_pipeline(
    engine: Engine,
    directory: str | Path,
    seed: int,
    wait: bool = True,
    timeout: float | None = 300.0,
) -> str | BatchState:
    """Submit the directory-classification workflow; in wait mode, block for
    and summarize the final state."""
    workflow_id = engine.start_workflow(
        WF_CLASSIFY_DIRECTORY, {"dir": str(directory), "seed": seed}, queue=Q_IO
    )
    if not wait:
        return workflow_id
    result = engine.get_result(workflow_id, timeout=timeout)
    return BatchState.from_result(result)


# ---------------------------------------------------------------------------
# Timing benchmark

@dataclass
class BenchReport:
    distribution: evaluation.ScoreDistribution
    n_docs: int
    n_runs: int

    def to_json_dict(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "n_runs": self.n_runs,
            "seconds": {
                **self.distribution.summary(),
                "runs": list(self.distribution.scores),
            },
        }


def bench_table(report: BenchReport) -> str:
    s = report.distribution.summary()
    title = f"Time [seconds per {report.n_docs} documents], {report.n_runs} runs"
    header = f"{'Min':>10}{'Q1':>10}{'Q2':>10}{'Q3':>10}{'Max':>10}"
    row = (
        f"{s['min']:>10.3f}{s['q1']:>10.3f}{s['q2']:>10.3f}"
        f"{s['q3']:>10.3f}{s['max']:>10.3f}"
    )
    return "\n".join([title, header, row])


def bench_pipeline(
    docs: Sequence[Document],
    bundle: ModelBundle,
    n_docs: int = 100,
    n_runs: int = 30,
    base_seed: int = 12,
    pipeline_config: PipelineConfig = PipelineConfig(),
    workdir: str | Path | None = None,
) -> BenchReport:
    """Wall-clock the full pipeline (read + validate + classify) end to end.

    Each run samples ``n_docs`` documents (without replacement within a run,
    independently across runs), writes them as one-file-per-document input,
    and executes the directory workflow on a fresh engine with one worker of
    each kind.
    """
    if len(docs) < n_docs:
        raise ValueError(f"need at least {n_docs} documents, have {len(docs)}")
    own_workdir = workdir is None
    workdir = Path(tempfile.mkdtemp(prefix="chunkwise-bench-")) if own_workdir else Path(workdir)
    seconds: list[float] = []
    try:
        for run in range(n_runs):
            rng = np.random.default_rng(base_seed + run)
            picked = rng.choice(len(docs), size=n_docs, replace=False)
            run_dir = workdir / f"run-{run:03d}"
            corpus.write_document_files([docs[i] for i in picked], run_dir)

            engine = setup_engine()
            sink = PredictionSink()
            io_worker = make_io_worker(engine, sink, pipeline_config).start()
            cls_worker = make_classify_worker(engine, bundle).start()
            started = time.perf_counter()
            state = run_pipeline(engine, run_dir, seed=base_seed + run, timeout=600.0)
            seconds.append(time.perf_counter() - started)
            assert isinstance(state, BatchState)
            if state.predicted + len(state.skips) != state.discovered:
                raise RuntimeError("benchmark run lost documents")
            io_worker.shutdown()
            cls_worker.shutdown()
            shutil.rmtree(run_dir, ignore_errors=True)
    finally:
        if own_workdir:
            shutil.rmtree(workdir, ignore_errors=True)
    return BenchReport(
        distribution=evaluation.ScoreDistribution(tuple(seconds)),
        n_docs=n_docs,
        n_runs=n_runs,
    )
