"""Planning phase: turn a batch of transactions into priority-tagged
execution queues plus the dependency edges between their fragments."""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .errors import EmptyInput, MissingPlanner
from .txn import (
    DependencyKind,
    ExecMode,
    Fragment,
    IsolationLevel,
    TxnSpec,
    fragment_transaction,
)

DEFAULT_BATCH_SIZE = 1024

_MASK64 = (1 << 64) - 1


class FragmentPriority(NamedTuple):
    """Deterministic, batch-unique fragment priority.

    Compares lexicographically on ``(batch_id, slot, frag_seq)``; ``slot`` is
    the transaction's arrival index in the batch, so arrival order is the
    serialization order for every planner count. ``planner_id`` only records
    which planner produced the fragment.
    """

    batch_id: int
    slot: int
    frag_seq: int
    planner_id: int


class Edge(NamedTuple):
    src: tuple
    dst: tuple
    kind: DependencyKind
    slot: int | None = None


@dataclass
class Batch:
    batch_id: int
    txns: tuple
    planner_count: int = 1

    def planner_of(self, index: int) -> int:
        return index % self.planner_count

    @property
    def planner_assignment(self) -> dict:
        return {t.txn_id: self.planner_of(i) for i, t in enumerate(self.txns)}

    def assigned(self, planner_id: int) -> list[tuple[int, TxnSpec]]:
        return [(i, t) for i, t in enumerate(self.txns) if i % self.planner_count == planner_id]

    def __len__(self):
        return len(self.txns)


@dataclass
class ExecutionQueue:
    queue_id: tuple  # (batch_id, planner_id, executor_id)
    fragments: list = field(default_factory=list)
    read_queue: bool = False

    @property
    def planner_id(self):
        return self.queue_id[1]

    @property
    def executor_id(self):
        return self.queue_id[2]

    def __len__(self):
        return len(self.fragments)


@dataclass
class PlannerOutput:
    planner_id: int
    batch_id: int
    queues: list  # one write queue per executor
    read_queues: list  # per executor; empty under serializable isolation
    edges: list
    txn_ids: list
    abortable_frags: dict  # txn_id -> number of abortable fragments


def form_batch(pending: list, max_batch_size: int, planner_count: int = 1, prev_batch_id: int = 0) -> Batch:
    """Take up to ``max_batch_size`` txns off the front of ``pending``."""
    if max_batch_size < 1:
        raise ValueError("max_batch_size must be >= 1")
    if planner_count < 1:
        raise ValueError("planner_count must be >= 1")
    if not pending:
        raise EmptyInput("no pending transactions")
    txns = tuple(pending[:max_batch_size])
    del pending[:max_batch_size]
    return Batch(prev_batch_id + 1, txns, planner_count)


def hash64(key) -> int:
    """splitmix64 finalizer over the packed key."""
    z = ((key[0] & 0xFFFF) << 48 ^ key[1]) & _MASK64
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def route(key, executor_count: int) -> int:
    if executor_count < 1:
        raise ValueError("executor_count must be >= 1")
    if executor_count == 1:
        return 0
    return hash64(key) % executor_count


def plan(
    planner_id: int,
    batch: Batch,
    executor_count: int,
    mode=ExecMode.SPECULATIVE,
    isolation=IsolationLevel.SERIALIZABLE,
    route_cache: dict | None = None,
) -> PlannerOutput:
    """Fragment this planner's share of ``batch`` and fill its queues."""
    read_committed = IsolationLevel(isolation) is IsolationLevel.READ_COMMITTED
    batch_id = batch.batch_id
    queues = [ExecutionQueue((batch_id, planner_id, e)) for e in range(executor_count)]
    read_queues = (
        [ExecutionQueue((batch_id, planner_id, e), read_queue=True) for e in range(executor_count)]
        if read_committed
        else []
    )
    routes = route_cache if route_cache is not None else {}
    edges = []
    last_on_key: dict = {}
    abortable_frags = {}
    txn_ids = []
    n_read = 0
    for slot, spec in batch.assigned(planner_id):
        frags = fragment_transaction(spec)
        txn_ids.append(spec.txn_id)
        n_abortable = 0
        for frag in frags:
            frag.priority = FragmentPriority(batch_id, slot, frag.seq, planner_id)
            if frag.abortable:
                n_abortable += 1
            for producer, in_slot in frag.data_inputs:
                edges.append(Edge(producer, frag.frag_id, DependencyKind.DATA, in_slot))
            if read_committed and not frag.writes:
                frag.rc_read = True
                e = n_read % executor_count
                n_read += 1
                frag.executor_id = e
                read_queues[e].fragments.append(frag)
                continue
            key = frag.key
            e = routes.get(key)
            if e is None:
                e = routes[key] = route(key, executor_count)
            frag.executor_id = e
            queues[e].fragments.append(frag)
            prev = last_on_key.get(key)
            if prev is not None:
                edges.append(Edge(prev.frag_id, frag.frag_id, DependencyKind.CONFLICT))
            last_on_key[key] = frag
        writers = [f for f in frags if f.writes]
        for a in frags:
            if a.abortable:
                for b in writers:
                    if b.seq > a.seq:
                        edges.append(Edge(a.frag_id, b.frag_id, DependencyKind.COMMIT))
        abortable_frags[spec.txn_id] = n_abortable
    return PlannerOutput(planner_id, batch_id, queues, read_queues, edges, txn_ids, abortable_frags)


def merge_for_executor(outputs: Sequence[PlannerOutput | None], executor_id: int, planner_count: int | None = None):
    """Collect every planner's queues bound for ``executor_id``.

    Returns write queues ordered by ``(batch_id, planner_id)`` followed by the
    read queues in the same order.
    """
    by_planner = {o.planner_id: o for o in outputs if o is not None}
    if planner_count is None:
        planner_count = len(outputs)
    missing = [p for p in range(planner_count) if p not in by_planner]
    if missing:
        raise MissingPlanner(f"no plan from planner(s) {missing}")
    ordered = sorted(by_planner.values(), key=lambda o: (o.batch_id, o.planner_id))
    write_queues = [o.queues[executor_id] for o in ordered]
    read_queues = [o.read_queues[executor_id] for o in ordered if o.read_queues]
    return write_queues + read_queues


def merged_fragment_order(queues: Sequence[ExecutionQueue]) -> list[Fragment]:
    """Interleave write queues from several planners by fragment priority."""
    lists = [q.fragments for q in queues if not q.read_queue]
    if len(lists) == 1:
        return list(lists[0])
    return list(heapq.merge(*lists, key=lambda f: f.priority))


def conflict_pairs(fragments: Sequence[Fragment]) -> set:
    """All cross-txn same-key pairs implied by the CONFLICT chains.

    Plans only carry the edge between each fragment and its same-key
    predecessor; every other pair follows by transitivity.
    """
    by_key: dict = {}
    for f in sorted(fragments, key=lambda f: f.priority):
        if not f.rc_read:
            by_key.setdefault(f.key, []).append(f)
    pairs = set()
    for chain in by_key.values():
        for i, a in enumerate(chain):
            for b in chain[i + 1:]:
                if a.txn_id != b.txn_id:
                    pairs.add((a.frag_id, b.frag_id))
    return pairs


def plan_to_json(outputs: Sequence[PlannerOutput], extra_edges=()) -> str:
    def frag_json(f):
        return {
            "txn": f.txn_id,
            "frag_seq": f.seq,
            "key": [f.key[0], f.key[1]],
            "priority": list(f.priority),
            "abortable": f.abortable,
            "writes": f.writes,
        }

    queues = []
    edges = []
    for o in sorted(outputs, key=lambda o: o.planner_id):
        for q in o.queues + o.read_queues:
            queues.append(
                {
                    "queue_id": list(q.queue_id),
                    "read_queue": q.read_queue,
                    "fragments": [frag_json(f) for f in q.fragments],
                }
            )
        edges.extend(o.edges)
    edges.extend(extra_edges)
    return json.dumps(
        {
            "queues": queues,
            "edges": [
                {"src": list(e.src), "dst": list(e.dst), "kind": e.kind.value, "slot": e.slot}
                for e in edges
            ],
        },
        indent=1,
    )

