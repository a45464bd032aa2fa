"""Two-phase locking with no-wait conflict handling.

Worker threads run whole transactions against committed state. Locks are
taken in step order and any conflict aborts the attempt on the spot, so there
is no waiting and hence no deadlock. Writes are buffered and applied at
commit while all locks are still held (strict 2PL).
"""
from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import KeyNotFound
from .storage import VersionedStore
from .txn import StepKind, evaluate

FREE = "FREE"
SHARED = "SHARED"
EXCLUSIVE = "EXCLUSIVE"


class LockTable:
    """Per-key lock words behind one mutex; every call returns immediately."""

    def __init__(self):
        self._mutex = threading.Lock()
        self._shared: dict = {}  # key -> set of holder txn ids
        self._exclusive: dict = {}  # key -> holder txn id

    def state(self, key):
        if key in self._exclusive:
            return (EXCLUSIVE, self._exclusive[key])
        holders = self._shared.get(key)
        if holders:
            return (SHARED, len(holders))
        return (FREE,)

    def try_shared(self, key, txn) -> bool:
        with self._mutex:
            owner = self._exclusive.get(key)
            if owner is not None:
                return owner == txn
            self._shared.setdefault(key, set()).add(txn)
            return True

    def try_exclusive(self, key, txn) -> bool:
        with self._mutex:
            owner = self._exclusive.get(key)
            if owner is not None:
                return owner == txn
            holders = self._shared.get(key)
            if holders:
                if holders != {txn}:
                    return False
                del self._shared[key]  # upgrade
            self._exclusive[key] = txn
            return True

    def release_all(self, txn, keys) -> None:
        with self._mutex:
            for key in keys:
                if self._exclusive.get(key) == txn:
                    del self._exclusive[key]
                holders = self._shared.get(key)
                if holders is not None:
                    holders.discard(txn)
                    if not holders:
                        del self._shared[key]

    def is_free(self) -> bool:
        return not self._exclusive and not self._shared


@dataclass
class BaselineResult:
    submitted: int = 0
    commits: int = 0
    conflict_aborts: int = 0
    logic_aborts: int = 0
    retries: int = 0
    unresolved: int = 0
    elapsed_s: float = 0.0
    latencies_us: list = field(default_factory=list)
    commit_order: list = field(default_factory=list)
    logic_aborted: list = field(default_factory=list)
    unresolved_txns: list = field(default_factory=list)

    @property
    def throughput(self) -> float:
        return self.commits / self.elapsed_s if self.elapsed_s > 0 else 0.0


class _Conflict(Exception):
    pass


def backoff_delay(seed: int, txn_id: int, attempt: int, base_us: float = 5.0, cap_us: float = 2000.0) -> float:
    """Seconds to sleep before retry ``attempt``: capped exponential with a
    jitter drawn from a generator keyed on (seed, txn, attempt)."""
    span = min(cap_us, base_us * (1 << min(attempt, 20)))
    u = np.random.default_rng([seed, txn_id, attempt]).random()
    return span * (0.5 + 0.5 * u) / 1e6


def _attempt(spec, store, locks: LockTable, held: list):
    """Run one attempt. Returns the write buffer, or None on a logic abort."""
    txn = spec.txn_id
    write_set = spec.write_set
    committed = store._committed
    local = {}
    slots = {}
    for i, step in enumerate(spec.steps):
        key = step.key
        if key not in local:
            ok = locks.try_exclusive(key, txn) if key in write_set else locks.try_shared(key, txn)
            if not ok:
                raise _Conflict
            held.append(key)
        if step.kind is StepKind.WRITE:
            current = local.get(key)
        elif key in local:
            current = local[key]
        else:
            try:
                current = committed[key]
            except KeyError:
                raise KeyNotFound(key) from None
        slot_value, new, ok = evaluate(step, current, slots)
        if not ok:
            return None
        if step.kind is not StepKind.WRITE:
            slots[i] = slot_value
        local[key] = new
    return {k: v for k, v in local.items() if k in write_set}


def run_2pl_nowait(
    store: VersionedStore,
    stream,
    thread_count: int = 1,
    retry_budget: int = 1000,
    seed: int = 0,
    lock_table: LockTable | None = None,
) -> BaselineResult:
    """Execute ``stream`` on ``thread_count`` workers; returns counters and
    the commit order (which a serial replay must reproduce)."""
    if thread_count < 1:
        raise ValueError("thread_count must be >= 1")
    locks = lock_table or LockTable()
    work = deque(stream)
    result = BaselineResult(submitted=len(work))
    tally = threading.Lock()
    commit_order = result.commit_order

    def worker():
        conflicts = logic = retries = 0
        latencies = []
        while True:
            try:
                spec = work.popleft()
            except IndexError:
                break
            start = time.monotonic_ns()
            attempt = 0
            while True:
                held = []
                try:
                    writes = _attempt(spec, store, locks, held)
                except _Conflict:
                    locks.release_all(spec.txn_id, held)
                    conflicts += 1
                    if attempt >= retry_budget:
                        with tally:
                            result.unresolved += 1
                            result.unresolved_txns.append(spec.txn_id)
                        break
                    time.sleep(backoff_delay(seed, spec.txn_id, attempt))
                    attempt += 1
                    retries += 1
                    continue
                except BaseException:
                    locks.release_all(spec.txn_id, held)
                    raise
                if writes is None:
                    locks.release_all(spec.txn_id, held)
                    logic += 1
                    with tally:
                        result.logic_aborted.append(spec.txn_id)
                    break
                for key, value in writes.items():
                    store.put_committed(key, value)
                commit_order.append(spec.txn_id)
                locks.release_all(spec.txn_id, held)
                latencies.append((time.monotonic_ns() - start) / 1000.0)
                break
        with tally:
            result.conflict_aborts += conflicts
            result.logic_aborts += logic
            result.retries += retries
            result.latencies_us.extend(latencies)

    t0 = time.perf_counter()
    if thread_count == 1:
        worker()
    else:
        errors = []

        def guarded():
            try:
                worker()
            except BaseException as exc:  # noqa: BLE001 - re-raised after join
                errors.append(exc)
                work.clear()

        threads = [threading.Thread(target=guarded, name=f"2pl-{i}") for i in range(thread_count)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
    result.elapsed_s = time.perf_counter() - t0
    result.commits = len(commit_order)
    return result
