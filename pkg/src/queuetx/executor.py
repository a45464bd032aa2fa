"""Execution phase and the batch driver.

Each executor owns the queues routed to it, interleaves them by fragment
priority and runs fragments in that order per record. Fragments waiting on a
data input (or, in conservative mode, on an unresolved abortable writer) only
hold back later fragments on the *same* record; the rest of the queue keeps
moving. At the end of the batch a single coordinator decides every txn and
installs the committed versions.

Determinism in speculative mode rests on two rules: a reader always reads the
newest version written before it, even if that version belongs to an aborted
txn (it then aborts with it), and a skipped write-bearing fragment leaves an
aborted placeholder version. Which version a fragment reads is therefore fixed
by the plan, not by thread timing.
"""
from __future__ import annotations

import enum
import itertools
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

from .deps import ABORTED, ACTIVE, COMMITTED as TXN_COMMITTED, DependencyGraph, KeyGate
from .errors import EngineError, IncompleteDecisions, Stall
from .planner import (
    Batch,
    Edge,
    merge_for_executor,
    merged_fragment_order,
    plan,
)
from .storage import COMMITTED, VersionedStore
from .txn import DependencyKind, ExecMode, IsolationLevel, StepKind, evaluate

DEFAULT_MAX_POLLS = 10**7


class Decision(str, enum.Enum):
    COMMITTED = "COMMITTED"
    LOGIC = "ABORTED_LOGIC"
    CASCADE = "ABORTED_CASCADE"

    @property
    def committed(self) -> bool:
        return self is Decision.COMMITTED


class Outcome(str, enum.Enum):
    OK = "OK"
    LOGIC_ABORT = "LOGIC_ABORT"
    SKIPPED = "SKIPPED"
    PENDING = "PENDING"


class FragmentEvent(NamedTuple):
    batch: int
    txn: int
    frag_seq: int
    key: tuple
    executor: int
    outcome: str
    ts: int
    seq: int
    priority: tuple
    read_from: object  # COMMITTED, a writer txn id, or None when nothing was read
    writes: bool
    rc_read: bool
    observed: object = None  # record value seen before the fragment's ops ran

    def csv(self) -> str:
        src = "-" if self.read_from is None else self.read_from
        return (
            f"{self.batch},{self.txn},{self.frag_seq},{self.key[0]}:{self.key[1]},"
            f"{self.executor},{self.outcome},{self.ts},{self.seq},{src}"
        )


EVENT_LOG_HEADER = "batch,txn,frag_seq,key,executor,outcome,ts,seq,read_from"


@dataclass
class BatchResult:
    batch_id: int
    decisions: dict
    txn_order: list
    started_ns: int
    finished_ns: int
    events: list = field(default_factory=list)
    read_from: dict = field(default_factory=dict)
    stalls: int = 0

    @property
    def committed(self) -> list:
        return [t for t in self.txn_order if self.decisions[t] is Decision.COMMITTED]

    def count(self, decision: Decision) -> int:
        return sum(1 for d in self.decisions.values() if d is decision)

    def latency_us(self) -> float:
        return (self.finished_ns - self.started_ns) / 1000.0


class _Context:
    """State shared by the executors of one batch."""

    def __init__(self, store, deps, mode, isolation, batch_id, event_log, max_polls):
        self.store = store
        self.deps = deps
        self.speculative = ExecMode(mode) is ExecMode.SPECULATIVE
        self.isolation = IsolationLevel(isolation)
        self.batch_id = batch_id
        self.log = [] if event_log else None
        self.seq = itertools.count()
        self.t0 = time.monotonic_ns()
        self.failed = threading.Event()
        self.max_polls = max_polls
        self.read_from = {}
        self.stalls = 0


def link_queues(queues, ctx: _Context, executor_id: int):
    """Fix the per-record order of this executor's fragments.

    Returns ``(read_frags, write_frags)`` in execution order and records, for
    each fragment that reads its record, the txn whose version it will read.
    Conservative mode also attaches the gate of earlier abortable writers.
    """
    deps = ctx.deps
    conservative = not ctx.speculative
    ordered = merged_fragment_order(queues)
    read_frags = [f for q in queues if q.read_queue for f in q.fragments]
    prev_writer = {}
    last = {}
    gates = {}
    extra_edges = []
    read_from = ctx.read_from
    for f in ordered:
        k = f.key
        if f.needs_read:
            w = prev_writer.get(k, COMMITTED)
            f.read_from = w
            if w is not COMMITTED:
                read_from.setdefault(f.txn_id, set()).add(w)
            if conservative:
                g = gates.get(k)
                if g is not None:
                    f.gate = (g, len(g.txns))
        if f.writes:
            prev_writer[k] = f.txn_id
            if conservative and deps.is_abortable_txn(f.txn_id):
                g = gates.get(k)
                if g is None:
                    g = gates[k] = KeyGate()
                g.txns.append(f.txn_id)
        prev = last.get(k)
        if prev is not None and prev.priority.planner_id != f.priority.planner_id:
            extra_edges.append(Edge(prev.frag_id, f.frag_id, DependencyKind.CONFLICT))
        last[k] = f
    for f in read_frags:
        f.read_from = COMMITTED
    if extra_edges:
        deps.register_edges(extra_edges)
    return read_frags, ordered


def _log(ctx, f, executor_id, outcome, read_src, observed=None):
    ctx.log.append(
        FragmentEvent(
            ctx.batch_id,
            f.txn_id,
            f.seq,
            f.key,
            executor_id,
            outcome.value,
            time.monotonic_ns() - ctx.t0,
            next(ctx.seq),
            f.priority,
            read_src,
            f.writes,
            f.rc_read,
            observed,
        )
    )


def _skip(ctx, f, executor_id, outcome=None, read_src=None, observed=None):
    if not f.rc_read and f.writes:
        # placeholder keeps "newest earlier version" independent of timing
        ctx.store.write_speculative(f.key, None, f.txn_id, f.priority, aborted=True)
    outcome = outcome or Outcome.SKIPPED
    if ctx.log is not None:
        _log(ctx, f, executor_id, outcome, read_src, observed)
    return outcome


def execute_fragment(f, ctx: _Context, executor_id: int = 0) -> Outcome:
    deps = ctx.deps
    store = ctx.store
    txn = f.txn_id
    if deps.status[txn] is ABORTED:
        return _skip(ctx, f, executor_id)
    if f.data_inputs or f.gate is not None:
        slots, missing = deps.poll_ready(f)
        if missing:
            return Outcome.PENDING
    else:
        slots = {}

    read_src = None
    current = None
    if f.needs_read:
        key = f.key
        if f.rc_read:
            current = store.read_committed(key)
            read_src = COMMITTED
        elif ctx.speculative:
            entry = store.latest_entry(key)
            if entry is None:
                current = store.read_committed(key)
                read_src = COMMITTED
            else:
                read_src = entry.txn_id
                if read_src != txn and not deps.record_taint(txn, read_src):
                    return _skip(ctx, f, executor_id, read_src=read_src)
                current = entry.value
        else:
            current, read_src = store.read_latest(key)
    observed = current

    for slot, step in f.ops:
        slot_value, current, ok = evaluate(step, current, slots)
        if not ok:
            # conservative mode records no readers, so this aborts txn alone
            deps.cascade_abort(txn)
            return _skip(ctx, f, executor_id, Outcome.LOGIC_ABORT, read_src, observed)
        if step.kind is not StepKind.WRITE:
            slots[slot] = slot_value

    if f.writes:
        entry = store.write_speculative(f.key, current, txn, f.priority)
        deps.register_write(txn, entry)
    for slot in f.exports:
        deps.publish(f.frag_id, slot, slots[slot])
    if f.abortable:
        deps.abortable_done(txn)
    if ctx.log is not None:
        _log(ctx, f, executor_id, Outcome.OK, read_src, observed)
    return Outcome.OK


def run_executor(ctx: _Context, executor_id: int, queues) -> int:
    """Drain one executor's queues. Returns the number of idle polls."""
    read_frags, write_frags = link_queues(queues, ctx, executor_id)
    pending = read_frags + write_frags
    idle = 0
    total_idle = 0
    failed = ctx.failed
    while pending:
        if failed.is_set():
            return total_idle
        blocked = set()
        remaining = []
        progressed = False
        for f in pending:
            if f.key in blocked and not f.rc_read:
                remaining.append(f)
                continue
            if execute_fragment(f, ctx, executor_id) is Outcome.PENDING:
                if not f.rc_read:
                    blocked.add(f.key)
                remaining.append(f)
            else:
                progressed = True
        pending = remaining
        if not pending:
            break
        if progressed:
            idle = 0
            continue
        idle += 1
        total_idle += 1
        if idle > ctx.max_polls:
            head = pending[0]
            raise Stall(
                f"executor {executor_id} stuck with {len(pending)} fragments",
                {"executor": executor_id, "head": repr(head), "missing": ctx.deps.poll_ready(head)[1]},
            )
        time.sleep(0)
    return total_idle


def execute_batch(
    queues_per_executor,
    ctx: _Context,
    pool: ThreadPoolExecutor | None = None,
) -> None:
    """Run every executor over its merged queues until all are drained."""
    n = len(queues_per_executor)
    if n == 1 or pool is None:
        if n == 1:
            ctx.stalls += run_executor(ctx, 0, queues_per_executor[0])
            return
        # without a pool fall back to plain threads
        pool = ThreadPoolExecutor(max_workers=n)
        try:
            return execute_batch(queues_per_executor, ctx, pool)
        finally:
            pool.shutdown()

    def guarded(e):
        try:
            return run_executor(ctx, e, queues_per_executor[e])
        except BaseException:
            ctx.failed.set()
            raise

    futures = [pool.submit(guarded, e) for e in range(n)]
    errors = []
    for fut in futures:
        try:
            ctx.stalls += fut.result()
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors.append(exc)
    if errors:
        stalls = [e for e in errors if isinstance(e, Stall)]
        raise (stalls or errors)[0]


def decide(txn_order, deps: DependencyGraph, read_from: dict, speculative: bool) -> dict:
    """Final decision for every txn, computed in priority order."""
    status = deps.status
    decisions = {}
    for txn in txn_order:
        st = status[txn]
        if st is ABORTED:
            if speculative and any(status[w] is ABORTED for w in read_from.get(txn, ())):
                decisions[txn] = Decision.CASCADE
            else:
                decisions[txn] = Decision.LOGIC
        else:
            if st is ACTIVE:
                deps.resolve_txn(txn, TXN_COMMITTED)
            decisions[txn] = Decision.COMMITTED
    return decisions


def commit_barrier(result: BatchResult, store: VersionedStore, deps: DependencyGraph) -> None:
    """Install the batch's committed versions and reset batch-local state."""
    missing = [t for t in result.txn_order if t not in result.decisions]
    if missing:
        raise IncompleteDecisions(missing)
    if store.batch_active:
        store.install_batch({t: d is Decision.COMMITTED for t, d in result.decisions.items()})
    deps.clear()


class QueueEngine:
    """Deterministic plan-then-execute engine over a :class:`VersionedStore`.

    >>> store = VersionedStore()
    >>> store.bulk_load([((0, 1), 10)])
    1
    >>> from .txn import parse_spec
    >>> with QueueEngine(store) as eng:
    ...     res = eng.process([parse_spec("TXN 1 | RMW k1 ADD 5")])
    >>> store.read_committed((0, 1)), res.decisions[1].value
    (15, 'COMMITTED')
    """

    def __init__(
        self,
        store: VersionedStore,
        planners: int = 1,
        executors: int = 1,
        mode=ExecMode.SPECULATIVE,
        isolation=IsolationLevel.SERIALIZABLE,
        *,
        strict: bool = False,
        event_log: bool = False,
        max_polls: int = DEFAULT_MAX_POLLS,
        keep_deps: bool = False,
    ):
        if planners < 1 or executors < 1:
            raise ValueError("planner and executor counts must be >= 1")
        self.store = store
        self.planners = planners
        self.executors = executors
        self.mode = ExecMode(mode)
        self.isolation = IsolationLevel(isolation)
        self.event_log = event_log
        self.max_polls = max_polls
        self.deps = DependencyGraph(self.mode, store, strict)
        self.batch_id = 0
        self.last_plan = None
        self.last_deps_json = None
        self.keep_deps = keep_deps
        self._routes = {}
        workers = max(planners, executors)
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="queuetx") if workers > 1 else None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _plan_one(self, planner_id, batch):
        out = plan(planner_id, batch, self.executors, self.mode, self.isolation, self._routes)
        self.deps.register_txns(out.abortable_frags)
        self.deps.register_edges(out.edges)
        return out

    def plan_batch(self, batch: Batch) -> list:
        if self._pool is None or self.planners == 1:
            return [self._plan_one(p, batch) for p in range(self.planners)]
        futures = [self._pool.submit(self._plan_one, p, batch) for p in range(self.planners)]
        return [f.result() for f in futures]

    def process(self, txns) -> BatchResult:
        """Plan, execute and commit ``txns`` as one batch."""
        batch = Batch(self.batch_id + 1, tuple(txns), self.planners)
        return self.run_batch(batch)

    def run_batch(self, batch: Batch) -> BatchResult:
        ids = [t.txn_id for t in batch.txns]
        if len(set(ids)) != len(ids):
            raise EngineError(f"batch {batch.batch_id} has duplicate txn ids")
        if batch.planner_count != self.planners:
            batch = Batch(batch.batch_id, batch.txns, self.planners)
        store = self.store
        deps = self.deps
        deps.clear()
        ctx = _Context(store, deps, self.mode, self.isolation, batch.batch_id, self.event_log, self.max_polls)
        store.begin_batch()
        try:
            outputs = self.plan_batch(batch)
            self.last_plan = outputs
            queues = [merge_for_executor(outputs, e, self.planners) for e in range(self.executors)]
            execute_batch(queues, ctx, self._pool)
            decisions = decide(ids, deps, ctx.read_from, ctx.speculative)
        except BaseException:
            store.discard_batch()
            deps.clear()
            raise
        result = BatchResult(
            batch.batch_id,
            decisions,
            ids,
            ctx.t0,
            time.monotonic_ns(),
            ctx.log or [],
            ctx.read_from,
            ctx.stalls,
        )
        if self.keep_deps:
            self.last_deps_json = deps.to_json()
        commit_barrier(result, store, deps)
        self.batch_id = batch.batch_id
        return result

