import json
import time

import pytest

from chunkwise import durable as d
from chunkwise.durable import (
    ActivityError,
    ActivityFailure,
    Client,
    Engine,
    Payload,
    PayloadTooLarge,
    RetryPolicy,
    UnknownQueueError,
    UnknownWorkflowError,
    VirtualClock,
    Worker,
    WorkerConfig,
    WorkflowFailedError,
    WorkflowNotFoundError,
    build_engine,
    export_history_jsonl,
    load_engine_config,
)

FAST_RETRY = RetryPolicy(max_attempts=3, initial_backoff=0.01)


def wait_until(predicate, timeout=10.0, interval=0.01):
    deadline = time.time() + timeout
    while time.time() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return False


def echo_activity(value):
    return value

def echo_workflow(ctx, value):
    return ctx.execute_activity("echo", value)


def make_engine(*queues, clock=None):
    engine = Engine(clock=clock)
    for name in queues or ("q",):
        engine.create_queue(name)
    return engine


def start_worker(engine, registry, queue="q", activities=None, workflows=None,
                 worker_id=None, max_concurrent=1):
    worker = Worker(
        engine,
        WorkerConfig(
            queue=queue,
            activities=activities or {},
            workflows=workflows or {},
            max_concurrent=max_concurrent,
            worker_id=worker_id,
        ),
    ).start()
    registry.append(worker)
    return worker


# ---------------------------------------------------------------------------
# payloads and policies

def test_payload_at_limit_ok():
    payload = Payload(data=b"x" * d.MAX_PAYLOAD_BYTES)
    assert payload.size == d.MAX_PAYLOAD_BYTES


def test_payload_over_limit_rejected():
    with pytest.raises(PayloadTooLarge):
        Payload(data=b"x" * (d.MAX_PAYLOAD_BYTES + 1))


def test_payload_from_value_roundtrip():
    payload = Payload.from_value({"a": [1, 2, "three"]})
    assert payload.to_value() == {"a": [1, 2, "three"]}


def test_retry_policy_backoff_progression():
    policy = RetryPolicy(max_attempts=4, initial_backoff=0.1, backoff_multiplier=2.0)
    assert policy.backoff_before(2) == pytest.approx(0.1)
    assert policy.backoff_before(3) == pytest.approx(0.2)
    assert policy.backoff_before(4) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)


# ---------------------------------------------------------------------------
# basic lifecycle

def test_echo_workflow_end_to_end(worker_registry):
    engine = make_engine("q")
    start_worker(engine, worker_registry, activities={"echo": echo_activity},
                 workflows={"wf": echo_workflow}, worker_id="w1")
    client = Client(engine)
    result = client.execute_workflow("wf", {"x": 1}, "q", timeout=10)
    assert result == {"x": 1}
    events = client.get_history("wf-1").events
    assert [e.kind for e in events] == [
        "WorkflowStarted", "ActivityScheduled", "ActivityStarted",
        "ActivityCompleted", "WorkflowCompleted",
    ]
    assert [e.seq for e in events] == [1, 2, 3, 4, 5]
    assert all(a.timestamp <= b.timestamp for a, b in zip(events, events[1:]))


def test_status_running_before_any_worker():
    engine = make_engine("q")
    # register the workflow name without starting the worker
    Worker(engine, WorkerConfig(queue="q", workflows={"wf": echo_workflow}, worker_id="idle"))
    client = Client(engine)
    wf_id = client.start_workflow("wf", 1, "q")
    assert client.get_status(wf_id) == "Running"


def test_unknown_workflow_and_queue_errors():
    engine = make_engine("q")
    with pytest.raises(UnknownWorkflowError):
        engine.start_workflow("nope", 1, "q")
    Worker(engine, WorkerConfig(queue="q", workflows={"wf": echo_workflow}, worker_id="w"))
    with pytest.raises(UnknownQueueError):
        engine.start_workflow("wf", 1, "missing-queue")
    with pytest.raises(WorkflowNotFoundError):
        engine.get_status("wf-404")
    with pytest.raises(WorkflowNotFoundError):
        engine.get_history("wf-404")


def test_worker_start_requires_declared_queue():
    engine = make_engine("q")
    worker = Worker(engine, WorkerConfig(queue="undeclared", worker_id="w"))
    with pytest.raises(UnknownQueueError):
        worker.start()


def test_workflow_failure_propagates(worker_registry):
    engine = make_engine("q")

    def failing_workflow(ctx, value):
        raise RuntimeError("exploded")

    start_worker(engine, worker_registry, workflows={"bad": failing_workflow}, worker_id="w1")
    client = Client(engine)
    wf_id = client.start_workflow("bad", 1, "q")
    with pytest.raises(WorkflowFailedError) as info:
        client.get_result(wf_id, timeout=10)
    assert "exploded" in str(info.value)
    assert client.get_status(wf_id) == "Failed"
    assert client.get_history(wf_id).events[-1].kind == "WorkflowFailed"


# ---------------------------------------------------------------------------
# retries

def test_retry_then_success_records_attempts(worker_registry):
    engine = make_engine("q")
    start_worker(engine, worker_registry, activities={"echo": echo_activity},
                 workflows={"wf": lambda ctx, v: ctx.execute_activity(
                     "echo", v, retry_policy=FAST_RETRY)},
                 worker_id="w1")
    engine.faults.fail_activity("echo", times=2, kind="io-transient")
    result = engine.execute_workflow("wf", "ok", "q", timeout=10)
    assert result == "ok"
    events = engine.get_history("wf-1").events
    started = [e.attempt for e in events if e.kind == "ActivityStarted"]
    failed = [e.attempt for e in events if e.kind == "ActivityFailed"]
    retried = [e.attempt for e in events if e.kind == "ActivityRetryScheduled"]
    assert started == [1, 2, 3]
    assert failed == [1, 2]
    assert retried == [2, 3]


def test_non_retryable_failure_single_attempt(worker_registry):
    engine = make_engine("q")
    policy = RetryPolicy(max_attempts=3, initial_backoff=0.01,
                         non_retryable_error_kinds=frozenset({"schema-invalid"}))

    def bad_doc(value):
        raise ActivityError("schema-invalid", "wrong format")

    def handler_workflow(ctx, value):
        outcome = ctx.execute_activity("bad_doc", value, retry_policy=policy)
        assert isinstance(outcome, ActivityFailure)
        return {"kind": outcome.kind, "attempts": outcome.attempts,
                "exhausted": outcome.retryable_exhausted}

    start_worker(engine, worker_registry, activities={"bad_doc": bad_doc},
                 workflows={"wf": handler_workflow}, worker_id="w1")
    result = engine.execute_workflow("wf", 1, "q", timeout=10)
    assert result == {"kind": "schema-invalid", "attempts": 1, "exhausted": False}
    kinds = [e.kind for e in engine.get_history("wf-1").events]
    assert kinds.count("ActivityStarted") == 1
    assert "ActivityRetryScheduled" not in kinds
    assert kinds[-1] == "WorkflowCompleted"  # the workflow was not failed


def test_retryable_exhausted_failure(worker_registry):
    engine = make_engine("q")

    def always_fails(value):
        raise ActivityError("io-transient", "still broken")

    def wf(ctx, value):
        outcome = ctx.execute_activity("flaky", value, retry_policy=FAST_RETRY)
        assert isinstance(outcome, ActivityFailure)
        return {"attempts": outcome.attempts, "exhausted": outcome.retryable_exhausted}

    start_worker(engine, worker_registry, activities={"flaky": always_fails},
                 workflows={"wf": wf}, worker_id="w1")
    result = engine.execute_workflow("wf", 1, "q", timeout=10)
    assert result == {"attempts": 3, "exhausted": True}
    started = [e for e in engine.get_history("wf-1").events if e.kind == "ActivityStarted"]
    assert len(started) == FAST_RETRY.max_attempts


# ---------------------------------------------------------------------------
# continue-as-new

def chain_workflow(ctx, value):
    n = value["n"]
    ctx.execute_activity("echo", n)
    if n > 1:
        ctx.continue_as_new({"n": n - 1})
    return {"done": True}


def test_continue_as_new_chain(worker_registry):
    engine = make_engine("q")
    start_worker(engine, worker_registry, activities={"echo": echo_activity},
                 workflows={"chain": chain_workflow}, worker_id="w1")
    result = engine.execute_workflow("chain", {"n": 3}, "q", timeout=10)
    assert result == {"done": True}
    runs = engine.get_runs("wf-1")
    assert len(runs) == 3
    for i, run_id in enumerate(runs):
        events = engine.get_history("wf-1", run_id).events
        assert events[0].kind == "WorkflowStarted"
        # each run carries exactly its own single activity
        assert sum(e.kind == "ActivityScheduled" for e in events) == 1
        terminal = events[-1].kind
        assert terminal == ("WorkflowCompleted" if i == 2 else "WorkflowContinuedAsNew")
    assert engine.get_status("wf-1") == "Completed"


def test_child_workflow_visible_as_separate_runs(worker_registry):
    engine = make_engine("q")

    def parent(ctx, value):
        return ctx.execute_child_workflow("chain", {"n": 2})

    start_worker(engine, worker_registry, activities={"echo": echo_activity},
                 workflows={"chain": chain_workflow, "parent": parent}, worker_id="w1")
    result = engine.execute_workflow("parent", None, "q", timeout=10)
    assert result == {"done": True}
    assert len(engine.get_runs("wf-1.c1")) == 2
    assert engine.get_status("wf-1.c1") == "Completed"


# ---------------------------------------------------------------------------
# workers and concurrency

def test_two_workers_split_tasks_no_double_execution(worker_registry):
    engine = make_engine("q")

    def slow(value):
        time.sleep(0.02)
        return value

    def wf(ctx, value):
        return ctx.execute_activity("slow", value, retry_policy=FAST_RETRY)

    for wid in ("w1", "w2"):
        start_worker(engine, worker_registry, activities={"slow": slow},
                     workflows={"wf": wf}, worker_id=wid, max_concurrent=1)
    ids = [engine.start_workflow("wf", i, "q") for i in range(14)]
    for wf_id in ids:
        engine.get_result(wf_id, timeout=30)

    records = [r for r in engine.execution_ledger() if r.task_kind == "activity"]
    assert len(records) == 14
    # every attempt executed exactly once
    attempts = {(r.task_uid, r.attempt) for r in records}
    assert len(attempts) == 14
    # both workers participated
    assert {r.worker_id for r in records} == {"w1", "w2"}
    # max_concurrent=1: per worker, execution intervals never overlap
    for wid in ("w1", "w2"):
        spans = sorted((r.started_at, r.ended_at) for r in records if r.worker_id == wid)
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert e1 <= s2


def test_queue_isolation_and_drain(worker_registry):
    engine = make_engine("io", "work")

    def wf(ctx, value):
        return ctx.execute_activity("job", value, queue="work", retry_policy=FAST_RETRY)

    start_worker(engine, worker_registry, queue="io", workflows={"wf": wf},
                 worker_id="io-1")
    client = Client(engine)
    wf_id = client.start_workflow("wf", 5, "io")
    # no worker on "work": the task stalls and the io worker never takes it
    time.sleep(0.3)
    assert client.get_status(wf_id) == "Running"
    assert all(r.name != "job" for r in engine.execution_ledger())
    # a worker on the right queue drains it
    start_worker(engine, worker_registry, queue="work",
                 activities={"job": lambda v: v * 2}, worker_id="work-1")
    assert client.get_result(wf_id, timeout=10) == 10
    job_runs = [r for r in engine.execution_ledger() if r.name == "job"]
    assert [r.worker_id for r in job_runs] == ["work-1"]


def test_kill_mid_activity_second_worker_completes(worker_registry):
    engine = make_engine("io", "work")

    def wf(ctx, value):
        out = ctx.execute_activity("job", value, queue="work", retry_policy=FAST_RETRY)
        if isinstance(out, ActivityFailure):
            raise RuntimeError(out.kind)
        return out

    start_worker(engine, worker_registry, queue="io", workflows={"wf": wf}, worker_id="io-1")
    victim = start_worker(engine, worker_registry, queue="work",
                          activities={"job": lambda v: {"ok": v}}, worker_id="work-1")
    engine.faults.hold_activity("job")
    client = Client(engine)
    wf_id = client.start_workflow("wf", 7, "io")
    assert wait_until(lambda: any(
        e.kind == "ActivityStarted" for e in client.get_history(wf_id).events
    ))
    victim.kill()
    start_worker(engine, worker_registry, queue="work",
                 activities={"job": lambda v: {"ok": v}}, worker_id="work-2")
    engine.faults.release_activity("job")
    assert client.get_result(wf_id, timeout=15) == {"ok": 7}

    events = client.get_history(wf_id).events
    failed = [e for e in events if e.kind == "ActivityFailed"]
    assert len(failed) == 1 and failed[0].details["kind"] == "worker-died"
    completed = [e for e in events if e.kind == "ActivityCompleted"]
    assert completed[0].worker_id == "work-2" and completed[0].attempt == 2
    # the zombie execution was discarded, not double-counted
    discarded = [r for r in engine.execution_ledger() if r.outcome == "discarded"]
    assert len(discarded) == 1 and discarded[0].worker_id == "work-1"


def test_shutdown_requeues_in_flight(worker_registry):
    engine = make_engine("io", "work")

    def wf(ctx, value):
        out = ctx.execute_activity("job", value, queue="work", retry_policy=FAST_RETRY)
        if isinstance(out, ActivityFailure):
            raise RuntimeError(out.kind)
        return out

    start_worker(engine, worker_registry, queue="io", workflows={"wf": wf}, worker_id="io-1")
    first = start_worker(engine, worker_registry, queue="work",
                         activities={"job": lambda v: v}, worker_id="work-1")
    engine.faults.hold_activity("job")
    client = Client(engine)
    wf_id = client.start_workflow("wf", 1, "io")
    assert wait_until(lambda: any(
        e.kind == "ActivityStarted" for e in client.get_history(wf_id).events
    ))
    first.shutdown()
    assert client.get_status(wf_id) == "Running"
    start_worker(engine, worker_registry, queue="work",
                 activities={"job": lambda v: v}, worker_id="work-2")
    engine.faults.release_activity("job")
    assert client.get_result(wf_id, timeout=15) == 1
    failed = [e for e in client.get_history(wf_id).events if e.kind == "ActivityFailed"]
    assert failed and failed[0].details["kind"] == "worker-shutdown"


def test_heartbeat_timeout_detected_and_retried(worker_registry):
    engine = make_engine("io", "work")

    def wf(ctx, value):
        out = ctx.execute_activity("job", value, queue="work",
                                   retry_policy=FAST_RETRY)
        if isinstance(out, ActivityFailure):
            raise RuntimeError(out.kind)
        return out

    start_worker(engine, worker_registry, queue="io", workflows={"wf": wf}, worker_id="io-1")
    flaky = Worker(engine, WorkerConfig(
        queue="work", activities={"job": lambda v: v}, worker_id="work-1",
        heartbeat_timeout=0.15,
    )).start()
    worker_registry.append(flaky)
    engine.faults.hold_activity("job")
    client = Client(engine)
    wf_id = client.start_workflow("wf", 9, "io")
    assert wait_until(lambda: any(
        e.kind == "ActivityStarted" for e in client.get_history(wf_id).events
    ))
    flaky._abort_for_test()  # crash: engine not told, heartbeats stop
    time.sleep(0.3)
    assert engine.check_worker_liveness() == ["work-1"]
    start_worker(engine, worker_registry, queue="work",
                 activities={"job": lambda v: v}, worker_id="work-2")
    engine.faults.release_activity("job")
    assert client.get_result(wf_id, timeout=15) == 9
    failed = [e for e in client.get_history(wf_id).events if e.kind == "ActivityFailed"]
    assert failed[0].details["kind"] == "heartbeat-timeout"


def test_worker_death_exhausts_attempts(worker_registry):
    engine = make_engine("io", "work")
    policy = RetryPolicy(max_attempts=2, initial_backoff=0.01)

    def wf(ctx, value):
        out = ctx.execute_activity("job", value, queue="work", retry_policy=policy)
        if isinstance(out, ActivityFailure):
            return {"exhausted": out.retryable_exhausted, "attempts": out.attempts}
        return out

    start_worker(engine, worker_registry, queue="io", workflows={"wf": wf}, worker_id="io-1")
    client = Client(engine)
    engine.faults.hold_activity("job")
    wf_id = client.start_workflow("wf", 1, "io")
    for n in (1, 2):
        victim = start_worker(engine, worker_registry, queue="work",
                              activities={"job": lambda v: v}, worker_id=f"victim-{n}")
        assert wait_until(lambda: any(
            e.kind == "ActivityStarted" and e.attempt == n
            for e in client.get_history(wf_id).events
        ))
        victim.kill()
    result = client.get_result(wf_id, timeout=15)
    assert result == {"exhausted": True, "attempts": 2}
    started = [e for e in client.get_history(wf_id).events if e.kind == "ActivityStarted"]
    assert len(started) == 2  # never more than max_attempts


# ---------------------------------------------------------------------------
# determinism and limits

def run_deterministic_program():
    engine = make_engine("q", clock=VirtualClock())

    def wf(ctx, value):
        a = ctx.execute_activity("echo", value)
        b = ctx.execute_activity("echo", a + 1)
        if value < 1:
            ctx.continue_as_new(b)
        return b

    worker = Worker(engine, WorkerConfig(
        queue="q", activities={"echo": echo_activity}, workflows={"wf": wf},
        worker_id="w1",
    )).start()
    result = engine.execute_workflow("wf", 0, "q", timeout=15)
    trace = []
    for run_id in engine.get_runs("wf-1"):
        for e in engine.get_history("wf-1", run_id).events:
            trace.append((run_id, e.seq, e.kind, e.timestamp, e.attempt, e.worker_id,
                          e.payload_bytes))
    worker.shutdown()
    return result, trace


def test_virtual_clock_deterministic_histories():
    first = run_deterministic_program()
    second = run_deterministic_program()
    assert first == second


def test_history_limit_enforced(worker_registry):
    engine = make_engine("q")
    big = "x" * (1024 * 1024)  # 1MB result per call, 4MB cap per run

    def wf(ctx, value):
        for _ in range(6):
            out = ctx.execute_activity("big", None, retry_policy=FAST_RETRY)
            if isinstance(out, ActivityFailure):
                return {"stopped": out.kind}
        return {"stopped": "never"}

    start_worker(engine, worker_registry, activities={"big": lambda v: big},
                 workflows={"wf": wf}, worker_id="w1")
    result = engine.execute_workflow("wf", None, "q", timeout=20)
    assert result == {"stopped": "history-limit"}
    history = engine.get_history("wf-1")
    assert history.payload_bytes <= d.MAX_HISTORY_BYTES


def test_oversized_activity_input_raises_in_workflow(worker_registry):
    engine = make_engine("q")

    def wf(ctx, value):
        return ctx.execute_activity("echo", "x" * (d.MAX_PAYLOAD_BYTES + 1))

    start_worker(engine, worker_registry, activities={"echo": echo_activity},
                 workflows={"wf": wf}, worker_id="w1")
    wf_id = engine.start_workflow("wf", None, "q")
    with pytest.raises(WorkflowFailedError):
        engine.get_result(wf_id, timeout=10)


def test_delayed_delivery_fault(worker_registry):
    engine = make_engine("q")
    start_worker(engine, worker_registry, activities={"echo": echo_activity},
                 workflows={"wf": echo_workflow}, worker_id="w1")
    engine.faults.delay_queue("q", 0.2)
    started = time.perf_counter()
    assert engine.execute_workflow("wf", 1, "q", timeout=10) == 1
    assert time.perf_counter() - started >= 0.2


# ---------------------------------------------------------------------------
# config and export

def test_engine_config_from_json(tmp_path):
    path = tmp_path / "engine.json"
    path.write_text(json.dumps({
        "queues": ["io", "classify"],
        "retry": {"max_attempts": 5, "initial_backoff": 0.5,
                  "non_retryable_error_kinds": ["schema-invalid"]},
        "workers": [{"queue": "io", "max_concurrent": 4}],
    }))
    config = load_engine_config(path)
    assert config.queues == ("io", "classify")
    assert config.retry.max_attempts == 5
    assert "schema-invalid" in config.retry.non_retryable_error_kinds
    assert config.worker_limits == {"io": 4}
    engine = build_engine(config)
    assert engine.queue_names() == ["classify", "io"]
    assert engine.default_retry_policy.max_attempts == 5


def test_engine_config_from_toml(tmp_path):
    path = tmp_path / "engine.toml"
    path.write_text(
        'queues = ["io"]\n\n[retry]\nmax_attempts = 2\n\n'
        '[[workers]]\nqueue = "io"\nmax_concurrent = 2\n'
    )
    config = load_engine_config(path)
    assert config.queues == ("io",)
    assert config.retry.max_attempts == 2
    assert config.worker_limits == {"io": 2}


def test_history_export_jsonl(worker_registry, tmp_path):
    engine = make_engine("q")
    start_worker(engine, worker_registry, activities={"echo": echo_activity},
                 workflows={"wf": echo_workflow}, worker_id="w1")
    engine.execute_workflow("wf", {"k": "v"}, "q", timeout=10)
    out = tmp_path / "history.jsonl"
    text = export_history_jsonl(engine.get_history("wf-1"), out)
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert lines == [json.loads(line) for line in text.splitlines()]
    assert lines[0]["kind"] == "WorkflowStarted"
    assert {"seq", "kind", "timestamp", "attempt", "worker_id", "payload_bytes",
            "details"} <= set(lines[0])
