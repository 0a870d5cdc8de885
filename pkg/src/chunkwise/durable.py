"""Miniature in-process durable-execution engine.

Four primitives: activities (smallest retryable unit), workflows
(deterministic orchestration code owning an event history), named FIFO task
queues, and workers (thread pools polling one queue). The engine enforces
payload and per-run history size limits, records append-only event
histories, retries failed activities per policy, and supports
continue-as-new chains. A pluggable clock (real or virtual) and a fault
injector (typed activity failures, execution gates, delivery delays,
worker kills) make the failure paths testable and deterministic.

Workflow code must not touch the wall clock or global RNG directly; the
workflow context provides what little nondeterminism-free state it needs.
Activities should be idempotent: a worker that dies mid-execution leaves a
zombie thread whose completion is discarded while the attempt is retried
elsewhere, so side effects can happen more than once.
"""

from __future__ import annotations

import itertools
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

__all__ = [
    "MAX_PAYLOAD_BYTES",
    "MAX_HISTORY_BYTES",
    "EngineError",
    "PayloadTooLarge",
    "HistoryLimitExceeded",
    "UnknownWorkflowError",
    "UnknownQueueError",
    "WorkflowNotFoundError",
    "WorkflowFailedError",
    "ActivityError",
    "ActivityFailure",
    "Payload",
    "RetryPolicy",
    "HistoryEvent",
    "WorkflowHistory",
    "WorkerConfig",
    "Worker",
    "WorkflowContext",
    "Engine",
    "Client",
    "RealClock",
    "VirtualClock",
    "EngineConfig",
    "load_engine_config",
    "build_engine",
    "export_history_jsonl",
    # event kinds
    "WORKFLOW_STARTED",
    "ACTIVITY_SCHEDULED",
    "ACTIVITY_STARTED",
    "ACTIVITY_COMPLETED",
    "ACTIVITY_FAILED",
    "ACTIVITY_RETRY_SCHEDULED",
    "WORKFLOW_CONTINUED_AS_NEW",
    "WORKFLOW_COMPLETED",
    "WORKFLOW_FAILED",
]

MAX_PAYLOAD_BYTES = 2 * 1024 * 1024
MAX_HISTORY_BYTES = 4 * 1024 * 1024

WORKFLOW_STARTED = "WorkflowStarted"
ACTIVITY_SCHEDULED = "ActivityScheduled"
ACTIVITY_STARTED = "ActivityStarted"
ACTIVITY_COMPLETED = "ActivityCompleted"
ACTIVITY_FAILED = "ActivityFailed"
ACTIVITY_RETRY_SCHEDULED = "ActivityRetryScheduled"
WORKFLOW_CONTINUED_AS_NEW = "WorkflowContinuedAsNew"
WORKFLOW_COMPLETED = "WorkflowCompleted"
WORKFLOW_FAILED = "WorkflowFailed"

_TERMINAL_KINDS = frozenset({WORKFLOW_COMPLETED, WORKFLOW_FAILED, WORKFLOW_CONTINUED_AS_NEW})

# failure kinds the engine itself produces
KIND_WORKER_DIED = "worker-died"
KIND_HEARTBEAT_TIMEOUT = "heartbeat-timeout"
KIND_WORKER_SHUTDOWN = "worker-shutdown"
KIND_PAYLOAD_TOO_LARGE = "payload-too-large"

_POLL_INTERVAL = 0.02


class EngineError(Exception):
    pass


class PayloadTooLarge(EngineError):
    pass


class HistoryLimitExceeded(EngineError):
    pass


class UnknownWorkflowError(EngineError):
    pass


class UnknownQueueError(EngineError):
    pass


class WorkflowNotFoundError(EngineError):
    pass


class WorkflowFailedError(EngineError):
    def __init__(self, workflow_id: str, error: dict):
        super().__init__(f"workflow {workflow_id} failed: {error.get('message')}")
        self.workflow_id = workflow_id
        self.error = error


class ActivityError(Exception):
    """Raised by activity code to signal a typed failure; the kind decides
    retryability against the task's retry policy."""

    def __init__(self, kind: str, message: str = ""):
        super().__init__(message or kind)
        self.kind = kind


@dataclass(frozen=True)
class ActivityFailure:
    """Terminal activity outcome delivered to the workflow as a value."""

    activity: str
    kind: str
    message: str
    attempts: int
    retryable_exhausted: bool = False


# ---------------------------------------------------------------------------
# Clock

class RealClock:
    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """Deterministic time source: ``sleep`` advances the clock and returns."""

    def __init__(self, start: float = 0.0):
        self._t = start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._t

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self._t += max(seconds, 0.0)
        time.sleep(0)  # let other threads run

    def advance(self, seconds: float) -> None:
        self.sleep(seconds)


# ---------------------------------------------------------------------------
# Payloads, policies, histories

@dataclass(frozen=True)
class Payload:
    """Serialized value; construction fails beyond the request size limit."""

    data: bytes
    content_type: str = "application/json"

    def __post_init__(self) -> None:
        if len(self.data) > MAX_PAYLOAD_BYTES:
            raise PayloadTooLarge(
                f"payload of {len(self.data)} bytes exceeds {MAX_PAYLOAD_BYTES}"
            )

    @property
    def size(self) -> int:
        return len(self.data)

    @classmethod
    def from_value(cls, value: Any) -> "Payload":
        return cls(json.dumps(value, ensure_ascii=False).encode("utf-8"))

    def to_value(self) -> Any:
        return json.loads(self.data.decode("utf-8"))


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    initial_backoff: float = 0.1
    backoff_multiplier: float = 2.0
    non_retryable_error_kinds: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_multiplier < 1.0:
            raise ValueError("backoff_multiplier must be >= 1")

    def backoff_before(self, attempt: int) -> float:
        """Delay before the given (>= 2) attempt."""
        return self.initial_backoff * self.backoff_multiplier ** (attempt - 2)


@dataclass(frozen=True)
class HistoryEvent:
    seq: int
    kind: str
    timestamp: float
    attempt: int | None = None
    worker_id: str | None = None
    payload_bytes: int = 0
    details: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "timestamp": self.timestamp,
            "attempt": self.attempt,
            "worker_id": self.worker_id,
            "payload_bytes": self.payload_bytes,
            "details": dict(self.details),
        }


class WorkflowHistory:
    """Append-only event log of one workflow run."""

    def __init__(self, workflow_id: str, run_id: str):
        self.workflow_id = workflow_id
        self.run_id = run_id
        self.events: list[HistoryEvent] = []
        self.payload_bytes = 0

    @property
    def closed(self) -> bool:
        return bool(self.events) and self.events[-1].kind in _TERMINAL_KINDS

    def append(
        self,
        kind: str,
        timestamp: float,
        attempt: int | None = None,
        worker_id: str | None = None,
        payload_bytes: int = 0,
        details: dict | None = None,
        enforce_limit: bool = True,
    ) -> HistoryEvent:
        if self.closed:
            raise EngineError(f"history of run {self.run_id} already closed")
        if enforce_limit and self.payload_bytes + payload_bytes > MAX_HISTORY_BYTES:
            raise HistoryLimitExceeded(
                f"run {self.run_id} history would exceed {MAX_HISTORY_BYTES} bytes; "
                "continue-as-new before accumulating this much"
            )
        event = HistoryEvent(
            seq=len(self.events) + 1,
            kind=kind,
            timestamp=timestamp,
            attempt=attempt,
            worker_id=worker_id,
            payload_bytes=payload_bytes,
            details=details or {},
        )
        self.events.append(event)
        self.payload_bytes += payload_bytes
        return event


def export_history_jsonl(history: WorkflowHistory, path: str | Path | None = None) -> str:
    """One JSON object per event; optionally written to ``path``."""
    lines = "\n".join(json.dumps(e.to_json_dict()) for e in history.events)
    if path is not None:
        Path(path).write_text(lines + "\n", encoding="utf-8")
    return lines


# ---------------------------------------------------------------------------
# Tasks (internal)

class _ResultBox:
    def __init__(self) -> None:
        self.event = threading.Event()
        self.value: Payload | ActivityFailure | None = None

    def resolve(self, value: Payload | ActivityFailure) -> None:
        self.value = value
        self.event.set()


@dataclass
class _ActivityTask:
    uid: int
    workflow_id: str
    run_id: str
    name: str
    input: Payload
    queue: str
    policy: RetryPolicy
    attempt: int
    box: _ResultBox

    kind = "activity"


@dataclass
class _WorkflowTask:
    uid: int
    workflow_id: str
    run_id: str
    name: str
    input: Payload
    queue: str

    kind = "workflow"


class _TaskQueue:
    def __init__(self, name: str):
        self.name = name
        self._items: deque = deque()
        self._cv = threading.Condition()

    def put(self, task, front: bool = False) -> None:
        with self._cv:
            if front:
                self._items.appendleft(task)
            else:
                self._items.append(task)
            self._cv.notify()

    def get(self, timeout: float):
        with self._cv:
            if not self._items:
                self._cv.wait(timeout)
            if self._items:
                return self._items.popleft()
            return None

    def __len__(self) -> int:
        with self._cv:
            return len(self._items)


@dataclass
class _ChainState:
    status: str = "Running"
    result: Payload | None = None
    error: dict | None = None
    done: threading.Event = field(default_factory=threading.Event)


@dataclass
class _WorkerState:
    worker_id: str
    queue: str
    dead: bool = False
    last_beat: float = 0.0
    heartbeat_timeout: float = 5.0
    inflight: dict = field(default_factory=dict)  # (uid, attempt) -> task


@dataclass
class ExecutionRecord:
    """Ledger row: one execution interval of one task attempt."""

    task_uid: int
    task_kind: str
    name: str
    attempt: int
    worker_id: str
    started_at: float
    ended_at: float | None = None
    outcome: str = "running"  # running | completed | failed | discarded


# ---------------------------------------------------------------------------
# Fault injection

class FaultInjector:
    """Test-facing switchboard: typed activity failures, execution gates that
    hold activities mid-flight, and per-queue delivery delays."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._fail_counts: dict[str, tuple[int, str, str]] = {}
        self._gates: dict[str, threading.Event] = {}
        self._delays: dict[str, float] = {}

    def fail_activity(self, name: str, times: int, kind: str = "injected",
                      message: str = "injected failure") -> None:
        with self._lock:
            self._fail_counts[name] = (times, kind, message)

    def maybe_fail(self, name: str) -> None:
        with self._lock:
            entry = self._fail_counts.get(name)
            if entry is None:
                return
            times, kind, message = entry
            if times <= 1:
                self._fail_counts.pop(name)
            else:
                self._fail_counts[name] = (times - 1, kind, message)
        raise ActivityError(kind, message)

    def hold_activity(self, name: str) -> threading.Event:
        with self._lock:
            gate = self._gates.get(name)
            if gate is None:
                gate = threading.Event()
                self._gates[name] = gate
            return gate

    def release_activity(self, name: str) -> None:
        with self._lock:
            gate = self._gates.get(name)
        if gate is not None:
            gate.set()

    def gate_for(self, name: str) -> threading.Event | None:
        with self._lock:
            return self._gates.get(name)

    def delay_queue(self, queue: str, seconds: float) -> None:
        with self._lock:
            self._delays[queue] = seconds

    def delivery_delay(self, queue: str) -> float:
        with self._lock:
            return self._delays.get(queue, 0.0)

    def reset(self) -> None:
        with self._lock:
            for gate in self._gates.values():
                gate.set()
            self._fail_counts.clear()
            self._gates.clear()
            self._delays.clear()


# ---------------------------------------------------------------------------
# Engine

class Engine:
    """Holds queues, histories, worker registry, and the execution ledger.

    All mutation happens under one lock; blocking waits (queue polling,
    result waits) happen outside it.
    """

    def __init__(self, clock: RealClock | VirtualClock | None = None,
                 default_retry_policy: RetryPolicy = RetryPolicy()):
        self.clock = clock or RealClock()
        self.default_retry_policy = default_retry_policy
        self.faults = FaultInjector()
        self._lock = threading.RLock()
        self._queues: dict[str, _TaskQueue] = {}
        self._histories: dict[str, list[WorkflowHistory]] = {}
        self._chains: dict[str, _ChainState] = {}
        self._workers: dict[str, _WorkerState] = {}
        self._registered_workflows: set[str] = set()
        self._ledger: list[ExecutionRecord] = []
        self._ledger_index: dict[tuple[int, int], ExecutionRecord] = {}
        self._discarded: set[tuple[int, int]] = set()
        self._uids = itertools.count(1)
        self._workflow_seq = itertools.count(1)
        self._worker_seq = itertools.count(1)
        self._child_counts: dict[str, itertools.count] = {}

    # -- queues -------------------------------------------------------------

    def create_queue(self, name: str) -> None:
        with self._lock:
            self._queues.setdefault(name, _TaskQueue(name))

    def queue_names(self) -> list[str]:
        with self._lock:
            return sorted(self._queues)

    def _queue(self, name: str) -> _TaskQueue:
        with self._lock:
            if name not in self._queues:
                raise UnknownQueueError(f"queue {name!r} is not declared")
            return self._queues[name]

    def _enqueue(self, queue_name: str, task, delay: float = 0.0, front: bool = False) -> None:
        queue = self._queue(queue_name)
        delay = delay + self.faults.delivery_delay(queue_name)
        if delay > 0:
            def deliver() -> None:
                self.clock.sleep(delay)
                queue.put(task)

            threading.Thread(target=deliver, daemon=True).start()
        else:
            queue.put(task, front=front)

    # -- worker registry ----------------------------------------------------

    def _register_worker(self, config: "WorkerConfig") -> str:
        with self._lock:
            worker_id = config.worker_id or f"worker-{next(self._worker_seq)}"
            if worker_id in self._workers and not self._workers[worker_id].dead:
                raise EngineError(f"worker id {worker_id!r} already registered")
            self._workers[worker_id] = _WorkerState(
                worker_id=worker_id,
                queue=config.queue,
                last_beat=self.clock.now(),
                heartbeat_timeout=config.heartbeat_timeout,
            )
            self._registered_workflows.update(config.workflows)
            return worker_id

    def _worker_beat(self, worker_id: str) -> None:
        with self._lock:
            state = self._workers.get(worker_id)
            if state is not None and not state.dead:
                state.last_beat = self.clock.now()

    def check_worker_liveness(self) -> list[str]:
        """Mark workers whose heartbeat lapsed as dead; returns their ids."""
        expired = []
        with self._lock:
            now = self.clock.now()
            for state in self._workers.values():
                if not state.dead and now - state.last_beat > state.heartbeat_timeout:
                    expired.append(state.worker_id)
        for worker_id in expired:
            self._handle_worker_death(worker_id, KIND_HEARTBEAT_TIMEOUT)
        return expired

    def _handle_worker_death(self, worker_id: str, kind: str) -> None:
        with self._lock:
            state = self._workers.get(worker_id)
            if state is None or state.dead:
                return
            state.dead = True
            inflight = list(state.inflight.items())
            state.inflight.clear()
        for (uid, attempt), task in inflight:
            with self._lock:
                started = (uid, attempt) in self._ledger_index
            if task.kind == "activity":
                if started:
                    # running attempt becomes a zombie; discard its eventual
                    # result and retry per policy
                    self._resolve_failed_attempt(task, attempt, worker_id, kind,
                                                 f"worker {worker_id} {kind}",
                                                 discard_token=True)
                else:
                    # claimed but never started: hand it straight back
                    self._enqueue(task.queue, task, front=True)
            else:
                # a workflow task that never started executing can be re-run;
                # a started one keeps running on its (still live) thread
                if not started:
                    self._enqueue(task.queue, task, front=True)

    # -- workflow lifecycle ---------------------------------------------------

    def start_workflow(
        self,
        name: str,
        input_value: Any,
        queue: str,
        workflow_id: str | None = None,
    ) -> str:
        payload = input_value if isinstance(input_value, Payload) else Payload.from_value(input_value)
        with self._lock:
            if name not in self._registered_workflows:
                raise UnknownWorkflowError(f"workflow {name!r} is not registered")
            self._queue(queue)
            if workflow_id is None:
                workflow_id = f"wf-{next(self._workflow_seq)}"
            if workflow_id in self._chains:
                raise EngineError(f"workflow id {workflow_id!r} already exists")
            run_id = f"{workflow_id}:r1"
            history = WorkflowHistory(workflow_id, run_id)
            history.append(
                WORKFLOW_STARTED,
                self.clock.now(),
                payload_bytes=payload.size,
                details={"workflow": name, "queue": queue},
            )
            self._histories[workflow_id] = [history]
            self._chains[workflow_id] = _ChainState()
            task = _WorkflowTask(
                uid=next(self._uids),
                workflow_id=workflow_id,
                run_id=run_id,
                name=name,
                input=payload,
                queue=queue,
            )
        self._enqueue(queue, task)
        return workflow_id

    def execute_workflow(self, name: str, input_value: Any, queue: str,
                         timeout: float | None = None) -> Any:
        workflow_id = self.start_workflow(name, input_value, queue)
        return self.get_result(workflow_id, timeout=timeout)

    def get_status(self, workflow_id: str) -> str:
        with self._lock:
            chain = self._chains.get(workflow_id)
            if chain is None:
                raise WorkflowNotFoundError(f"unknown workflow id {workflow_id!r}")
            return chain.status

    def get_result(self, workflow_id: str, timeout: float | None = None) -> Any:
        with self._lock:
            chain = self._chains.get(workflow_id)
            if chain is None:
                raise WorkflowNotFoundError(f"unknown workflow id {workflow_id!r}")
        if not chain.done.wait(timeout):
            raise TimeoutError(f"workflow {workflow_id} still running after {timeout}s")
        if chain.status == "Failed":
            raise WorkflowFailedError(workflow_id, chain.error or {})
        assert chain.result is not None
        return chain.result.to_value()

    def get_history(self, workflow_id: str, run_id: str | None = None) -> WorkflowHistory:
        with self._lock:
            runs = self._histories.get(workflow_id)
            if not runs:
                raise WorkflowNotFoundError(f"unknown workflow id {workflow_id!r}")
            if run_id is None:
                return runs[-1]
            for run in runs:
                if run.run_id == run_id:
                    return run
            raise WorkflowNotFoundError(f"unknown run id {run_id!r}")

    def get_runs(self, workflow_id: str) -> list[str]:
        with self._lock:
            runs = self._histories.get(workflow_id)
            if not runs:
                raise WorkflowNotFoundError(f"unknown workflow id {workflow_id!r}")
            return [run.run_id for run in runs]

    def execution_ledger(self) -> list[ExecutionRecord]:
        with self._lock:
            return list(self._ledger)

    # -- workflow execution (called from worker threads) ----------------------

    def _history_for_run(self, workflow_id: str, run_id: str) -> WorkflowHistory:
        for run in self._histories[workflow_id]:
            if run.run_id == run_id:
                return run
        raise WorkflowNotFoundError(f"unknown run {run_id!r}")

    def _workflow_task_started(self, task: _WorkflowTask, worker_id: str) -> bool:
        with self._lock:
            token = (task.uid, 0)
            if token in self._discarded:
                return False
            state = self._workers.get(worker_id)
            # only the current owner may start the task; a dead worker's claim
            # was already handed back to the queue
            if state is None or state.dead or token not in state.inflight:
                return False
            state.inflight.pop(token, None)
            record = ExecutionRecord(
                task_uid=task.uid,
                task_kind="workflow",
                name=task.name,
                attempt=1,
                worker_id=worker_id,
                started_at=self.clock.now(),
            )
            self._ledger.append(record)
            self._ledger_index[token] = record
            return True

    def _finish_workflow_record(self, task: _WorkflowTask, outcome: str) -> None:
        record = self._ledger_index.get((task.uid, 0))
        if record is not None:
            record.ended_at = self.clock.now()
            record.outcome = outcome

    def _workflow_completed(self, task: _WorkflowTask, result: Payload) -> None:
        with self._lock:
            history = self._history_for_run(task.workflow_id, task.run_id)
            history.append(
                WORKFLOW_COMPLETED,
                self.clock.now(),
                payload_bytes=result.size,
                details={"workflow": task.name},
                enforce_limit=False,
            )
            chain = self._chains[task.workflow_id]
            chain.status = "Completed"
            chain.result = result
            self._finish_workflow_record(task, "completed")
        chain.done.set()

    def _workflow_failed(self, task: _WorkflowTask, exc: Exception) -> None:
        with self._lock:
            history = self._history_for_run(task.workflow_id, task.run_id)
            error = {"kind": type(exc).__name__, "message": str(exc)}
            history.append(
                WORKFLOW_FAILED,
                self.clock.now(),
                details=error,
                enforce_limit=False,
            )
            chain = self._chains[task.workflow_id]
            chain.status = "Failed"
            chain.error = {**error, "run_id": task.run_id}
            self._finish_workflow_record(task, "failed")
        chain.done.set()

    def _workflow_continued(self, task: _WorkflowTask, new_input: Payload) -> None:
        with self._lock:
            history = self._history_for_run(task.workflow_id, task.run_id)
            history.append(
                WORKFLOW_CONTINUED_AS_NEW,
                self.clock.now(),
                payload_bytes=new_input.size,
                details={"workflow": task.name},
                enforce_limit=False,
            )
            runs = self._histories[task.workflow_id]
            run_id = f"{task.workflow_id}:r{len(runs) + 1}"
            next_history = WorkflowHistory(task.workflow_id, run_id)
            next_history.append(
                WORKFLOW_STARTED,
                self.clock.now(),
                payload_bytes=new_input.size,
                details={"workflow": task.name, "queue": task.queue,
                         "continued_from": task.run_id},
            )
            runs.append(next_history)
            self._finish_workflow_record(task, "completed")
            next_task = _WorkflowTask(
                uid=next(self._uids),
                workflow_id=task.workflow_id,
                run_id=run_id,
                name=task.name,
                input=new_input,
                queue=task.queue,
            )
        self._enqueue(task.queue, next_task)

    def _start_child_workflow(
        self, parent: "_WorkflowTask", name: str, input_value: Any, queue: str
    ) -> str:
        with self._lock:
            counter = self._child_counts.setdefault(parent.workflow_id, itertools.count(1))
            child_id = f"{parent.workflow_id}.c{next(counter)}"
        return self.start_workflow(name, input_value, queue, workflow_id=child_id)

    # -- activity scheduling and execution ------------------------------------

    def _schedule_activity(
        self,
        task_source: _WorkflowTask,
        name: str,
        input_value: Any,
        queue: str,
        policy: RetryPolicy | None,
    ) -> Payload | ActivityFailure:
        payload = input_value if isinstance(input_value, Payload) else Payload.from_value(input_value)
        policy = policy or self.default_retry_policy
        with self._lock:
            self._queue(queue)
            history = self._history_for_run(task_source.workflow_id, task_source.run_id)
            task = _ActivityTask(
                uid=next(self._uids),
                workflow_id=task_source.workflow_id,
                run_id=task_source.run_id,
                name=name,
                input=payload,
                queue=queue,
                policy=policy,
                attempt=1,
                box=_ResultBox(),
            )
            history.append(
                ACTIVITY_SCHEDULED,
                self.clock.now(),
                payload_bytes=payload.size,
                details={"activity": name, "queue": queue, "task_uid": task.uid},
            )
        self._enqueue(queue, task)
        task.box.event.wait()
        assert task.box.value is not None
        return task.box.value

    def _dequeue(self, queue_name: str, worker_id: str, timeout: float):
        task = self._queue(queue_name).get(timeout)
        self._worker_beat(worker_id)
        if task is None:
            return None
        with self._lock:
            state = self._workers.get(worker_id)
            if state is None or state.dead:
                # killed while polling: hand the task back untouched
                self._queues[queue_name].put(task, front=True)
                return None
            attempt = task.attempt if task.kind == "activity" else 0
            state.inflight[(task.uid, attempt)] = task
        return task

    def _attempt_started(self, task: _ActivityTask, attempt: int, worker_id: str) -> bool:
        with self._lock:
            token = (task.uid, attempt)
            if token in self._discarded:
                self._release_inflight(worker_id, token)
                return False
            state = self._workers.get(worker_id)
            if state is None or state.dead or token not in state.inflight:
                return False
            history = self._history_for_run(task.workflow_id, task.run_id)
            if history.closed:
                # run already reached a terminal event (e.g. the workflow gave
                # up on this activity); the stale task must not execute
                self._release_inflight(worker_id, token)
                return False
            history.append(
                ACTIVITY_STARTED,
                self.clock.now(),
                attempt=attempt,
                worker_id=worker_id,
                details={"activity": task.name, "task_uid": task.uid},
            )
            record = ExecutionRecord(
                task_uid=task.uid,
                task_kind="activity",
                name=task.name,
                attempt=attempt,
                worker_id=worker_id,
                started_at=self.clock.now(),
            )
            self._ledger.append(record)
            self._ledger_index[token] = record
            return True

    def _release_inflight(self, worker_id: str, token: tuple[int, int]) -> None:
        state = self._workers.get(worker_id)
        if state is not None:
            state.inflight.pop(token, None)

    def _attempt_completed(
        self, task: _ActivityTask, attempt: int, worker_id: str, result: Payload
    ) -> None:
        with self._lock:
            token = (task.uid, attempt)
            record = self._ledger_index.get(token)
            if token in self._discarded:
                if record is not None:
                    record.ended_at = self.clock.now()
                    record.outcome = "discarded"
                return
            self._release_inflight(worker_id, token)
            history = self._history_for_run(task.workflow_id, task.run_id)
            try:
                history.append(
                    ACTIVITY_COMPLETED,
                    self.clock.now(),
                    attempt=attempt,
                    worker_id=worker_id,
                    payload_bytes=result.size,
                    details={"activity": task.name, "task_uid": task.uid},
                )
            except HistoryLimitExceeded as exc:
                # the activity ran fine; its result just cannot be recorded
                history.append(
                    ACTIVITY_FAILED,
                    self.clock.now(),
                    attempt=attempt,
                    worker_id=worker_id,
                    details={"activity": task.name, "task_uid": task.uid,
                             "kind": "history-limit", "message": str(exc)},
                    enforce_limit=False,
                )
                if record is not None:
                    record.ended_at = self.clock.now()
                    record.outcome = "completed"
                task.box.resolve(
                    ActivityFailure(task.name, "history-limit", str(exc), attempt)
                )
                return
            if record is not None:
                record.ended_at = self.clock.now()
                record.outcome = "completed"
        task.box.resolve(result)

    def _attempt_failed(
        self, task: _ActivityTask, attempt: int, worker_id: str, kind: str, message: str
    ) -> None:
        self._resolve_failed_attempt(task, attempt, worker_id, kind, message,
                                     discard_token=False)

    def _resolve_failed_attempt(
        self, task: _ActivityTask, attempt: int, worker_id: str, kind: str,
        message: str, discard_token: bool,
    ) -> None:
        resolve_with: ActivityFailure | None = None
        with self._lock:
            token = (task.uid, attempt)
            record = self._ledger_index.get(token)
            if token in self._discarded:
                if record is not None and record.outcome == "running":
                    record.ended_at = self.clock.now()
                    record.outcome = "discarded"
                return
            if discard_token:
                self._discarded.add(token)
                if record is not None:
                    record.ended_at = self.clock.now()
                    record.outcome = "discarded"
            elif record is not None:
                record.ended_at = self.clock.now()
                record.outcome = "failed"
            self._release_inflight(worker_id, token)
            history = self._history_for_run(task.workflow_id, task.run_id)
            history.append(
                ACTIVITY_FAILED,
                self.clock.now(),
                attempt=attempt,
                worker_id=worker_id,
                details={"activity": task.name, "task_uid": task.uid,
                         "kind": kind, "message": message},
                enforce_limit=False,
            )
            if kind in task.policy.non_retryable_error_kinds:
                resolve_with = ActivityFailure(task.name, kind, message, attempt)
            elif attempt >= task.policy.max_attempts:
                resolve_with = ActivityFailure(
                    task.name, kind, message, attempt, retryable_exhausted=True
                )
            else:
                backoff = task.policy.backoff_before(attempt + 1)
                history.append(
                    ACTIVITY_RETRY_SCHEDULED,
                    self.clock.now(),
                    attempt=attempt + 1,
                    details={"activity": task.name, "task_uid": task.uid,
                             "backoff": backoff},
                    enforce_limit=False,
                )
                task.attempt = attempt + 1
        if resolve_with is not None:
            task.box.resolve(resolve_with)
        else:
            self._enqueue(task.queue, task, delay=backoff)


# ---------------------------------------------------------------------------
# Workers

@dataclass
class WorkerConfig:
    """One deployment unit: the queue it polls, what it can run, and limits.

    ``max_concurrent`` bounds simultaneous *activity* executions; workflow
    tasks spend nearly all their time blocked on activities, so each runs on
    its own thread without consuming an activity slot.
    """

    queue: str
    activities: Mapping[str, Callable[[Any], Any]] = field(default_factory=dict)
    workflows: Mapping[str, Callable[["WorkflowContext", Any], Any]] = field(default_factory=dict)
    max_concurrent: int = 1
    worker_id: str | None = None
    heartbeat_interval: float = 0.05
    heartbeat_timeout: float = 5.0

    def __post_init__(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


class Worker:
    """Polls one queue; executes registered activities and workflows."""

    def __init__(self, engine: Engine, config: WorkerConfig):
        self._engine = engine
        self._config = config
        self.worker_id = engine._register_worker(config)
        self._stopping = threading.Event()
        self._slots = threading.BoundedSemaphore(config.max_concurrent)
        self._poll_thread: threading.Thread | None = None
        self._threads: list[threading.Thread] = []

    def start(self) -> "Worker":
        self._engine._queue(self._config.queue)  # raises if undeclared
        self._poll_thread = threading.Thread(
            target=self._poll_loop, name=f"{self.worker_id}-poll", daemon=True
        )
        self._poll_thread.start()
        return self

    def _poll_loop(self) -> None:
        while not self._stopping.is_set():
            if not self._slots.acquire(timeout=_POLL_INTERVAL):
                continue
            if self._stopping.is_set():
                self._slots.release()
                break
            task = self._engine._dequeue(self._config.queue, self.worker_id, _POLL_INTERVAL)
            if task is None:
                self._slots.release()
                continue
            if task.kind == "workflow":
                self._slots.release()
                thread = threading.Thread(
                    target=self._run_workflow, args=(task,), daemon=True
                )
            else:
                thread = threading.Thread(
                    target=self._run_activity, args=(task,), daemon=True
                )
            self._threads = [t for t in self._threads if t.is_alive()]
            self._threads.append(thread)
            thread.start()

    def _run_activity(self, task: _ActivityTask) -> None:
        engine = self._engine
        # bind the attempt number now: the shared task object's attempt field
        # moves on when a retry is scheduled for a zombie execution
        attempt = task.attempt
        try:
            if not engine._attempt_started(task, attempt, self.worker_id):
                return
            try:
                engine.faults.maybe_fail(task.name)
                gate = engine.faults.gate_for(task.name)
                if gate is not None:
                    gate.wait()
                fn = self._config.activities.get(task.name)
                if fn is None:
                    raise ActivityError("unregistered", f"activity {task.name!r} not registered")
                result = fn(task.input.to_value())
                payload = result if isinstance(result, Payload) else Payload.from_value(result)
            except ActivityError as exc:
                engine._attempt_failed(task, attempt, self.worker_id, exc.kind, str(exc))
                return
            except PayloadTooLarge as exc:
                engine._attempt_failed(task, attempt, self.worker_id,
                                       KIND_PAYLOAD_TOO_LARGE, str(exc))
                return
            except Exception as exc:  # activity bugs become typed failures
                engine._attempt_failed(task, attempt, self.worker_id, "error", repr(exc))
                return
            engine._attempt_completed(task, attempt, self.worker_id, payload)
        finally:
            self._slots.release()
            engine._worker_beat(self.worker_id)

    def _run_workflow(self, task: _WorkflowTask) -> None:
        engine = self._engine
        if not engine._workflow_task_started(task, self.worker_id):
            return
        fn = self._config.workflows.get(task.name)
        ctx = WorkflowContext(engine, task, default_queue=self._config.queue)
        try:
            if fn is None:
                raise EngineError(f"workflow {task.name!r} not registered on this worker")
            result = fn(ctx, task.input.to_value())
            payload = result if isinstance(result, Payload) else Payload.from_value(result)
        except _ContinueAsNew as cont:
            engine._workflow_continued(task, cont.payload)
            return
        except Exception as exc:
            engine._workflow_failed(task, exc)
            return
        engine._workflow_completed(task, payload)

    def shutdown(self) -> None:
        """Stop polling; in-flight activity attempts are re-queued for retry."""
        self._stopping.set()
        if self._poll_thread is not None:
            self._poll_thread.join(timeout=2.0)
        self._engine._handle_worker_death(self.worker_id, KIND_WORKER_SHUTDOWN)

    def kill(self) -> None:
        """Simulate abrupt worker death: running attempts become zombies whose
        results are discarded and retried elsewhere."""
        self._stopping.set()
        self._engine._handle_worker_death(self.worker_id, KIND_WORKER_DIED)

    def _abort_for_test(self) -> None:
        """Crash simulation: stop all loops without telling the engine, so
        only the heartbeat sweep can discover the death."""
        self._stopping.set()


class _ContinueAsNew(Exception):
    def __init__(self, payload: Payload):
        super().__init__("continue-as-new")
        self.payload = payload


class WorkflowContext:
    """Workflow-side API: schedule activities, start children, continue-as-new.

    Provides the only clock workflow code may consult, keeping workflow logic
    replay-friendly.
    """

    def __init__(self, engine: Engine, task: _WorkflowTask, default_queue: str):
        self._engine = engine
        self._task = task
        self._default_queue = default_queue
        self.workflow_id = task.workflow_id
        self.run_id = task.run_id

    def execute_activity(
        self,
        name: str,
        input_value: Any,
        queue: str | None = None,
        retry_policy: RetryPolicy | None = None,
    ) -> Any:
        """Run an activity to terminal outcome: its result value on success,
        an ``ActivityFailure`` value otherwise (the workflow keeps running)."""
        outcome = self._engine._schedule_activity(
            self._task, name, input_value, queue or self._default_queue, retry_policy
        )
        if isinstance(outcome, ActivityFailure):
            return outcome
        return outcome.to_value()

    def execute_child_workflow(
        self, name: str, input_value: Any, queue: str | None = None
    ) -> Any:
        """Start a child workflow and block until its chain finishes."""
        child_id = self._engine._start_child_workflow(
            self._task, name, input_value, queue or self._default_queue
        )
        return self._engine.get_result(child_id)

    def start_child_workflow(
        self, name: str, input_value: Any, queue: str | None = None
    ) -> str:
        child_id = self._engine._start_child_workflow(
            self._task, name, input_value, queue or self._default_queue
        )
        return child_id

    def continue_as_new(self, input_value: Any) -> None:
        payload = input_value if isinstance(input_value, Payload) else Payload.from_value(input_value)
        raise _ContinueAsNew(payload)

    def now(self) -> float:
        return self._engine.clock.now()


class Client:
    """User-facing handle: submit workflows and inspect their state."""

    def __init__(self, engine: Engine):
        self._engine = engine

    def start_workflow(self, name: str, input_value: Any, queue: str) -> str:
        return self._engine.start_workflow(name, input_value, queue)

    def execute_workflow(self, name: str, input_value: Any, queue: str,
                         timeout: float | None = None) -> Any:
        return self._engine.execute_workflow(name, input_value, queue, timeout=timeout)

    def get_status(self, workflow_id: str) -> str:
        return self._engine.get_status(workflow_id)

    def get_result(self, workflow_id: str, timeout: float | None = None) -> Any:
        return self._engine.get_result(workflow_id, timeout=timeout)

    def get_history(self, workflow_id: str, run_id: str | None = None) -> WorkflowHistory:
        return self._engine.get_history(workflow_id, run_id)

    def get_runs(self, workflow_id: str) -> list[str]:
        return self._engine.get_runs(workflow_id)


# ---------------------------------------------------------------------------
# Engine configuration file

@dataclass(frozen=True)
class EngineConfig:
    queues: tuple[str, ...] = ("io", "classify")
    retry: RetryPolicy = RetryPolicy()
    worker_limits: Mapping[str, int] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        retry_data = data.get("retry", {})
        retry = RetryPolicy(
            max_attempts=retry_data.get("max_attempts", 3),
            initial_backoff=retry_data.get("initial_backoff", 0.1),
            backoff_multiplier=retry_data.get("backoff_multiplier", 2.0),
            non_retryable_error_kinds=frozenset(
                retry_data.get("non_retryable_error_kinds", ())
            ),
        )
        limits = {
            spec["queue"]: int(spec.get("max_concurrent", 1))
            for spec in data.get("workers", ())
        }
        return cls(
            queues=tuple(data.get("queues", ("io", "classify"))),
            retry=retry,
            worker_limits=limits,
        )


def load_engine_config(path: str | Path) -> EngineConfig:
    """Read an engine config from a .json or .toml file."""
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    else:
        data = json.loads(path.read_text(encoding="utf-8"))
    return EngineConfig.from_dict(data)


def build_engine(config: EngineConfig, clock: RealClock | VirtualClock | None = None) -> Engine:
    engine = Engine(clock=clock, default_retry_policy=config.retry)
    for name in config.queues:
        engine.create_queue(name)
    return engine
