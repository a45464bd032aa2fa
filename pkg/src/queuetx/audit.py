"""Checks over fragment event logs and read-from graphs.

These are the invariants the engine promises, phrased as functions that
return the offending events (empty means the property holds).
"""
from __future__ import annotations

from collections import deque

from .executor import Outcome
from .storage import COMMITTED


def fifo_violations(events) -> list:
    """Pairs of same-key write-bearing executions that ran out of priority order.

    Looks only at fragments that executed (OK or LOGIC_ABORT) or left an
    aborted placeholder (SKIPPED), i.e. every event that touched the record's
    version list.
    """
    last = {}
    bad = []
    for ev in sorted(events, key=lambda e: (e.batch, e.seq)):
        if not ev.writes or ev.rc_read or ev.outcome == Outcome.PENDING.value:
            continue
        k = (ev.batch, ev.key)
        prev = last.get(k)
        if prev is not None and prev.priority >= ev.priority:
            bad.append((prev, ev))
        last[k] = ev
    return bad


def rc_read_violations(events, committed=None) -> list:
    """Read-queue fragment events that observed anything but committed data.

    With ``committed`` (the batch-start state) the observed value itself is
    compared, not just the provenance tag.
    """
    bad = []
    for ev in events:
        if not ev.rc_read or ev.outcome == Outcome.SKIPPED.value:
            continue
        if ev.read_from != COMMITTED or (committed is not None and committed.get(ev.key) != ev.observed):
            bad.append(ev)
    return bad


def read_from_pairs(events) -> set:
    """``(reader_txn, writer_txn)`` pairs for cross-txn speculative reads."""
    return {
        (ev.txn, ev.read_from)
        for ev in events
        if ev.read_from not in (None, COMMITTED) and ev.read_from != ev.txn
    }


def reachable(pairs, roots) -> set:
    """Brute-force closure: every txn that read, directly or transitively,
    from one of ``roots``. ``pairs`` holds ``(reader, writer)``."""
    readers = {}
    for r, w in pairs:
        readers.setdefault(w, set()).add(r)
    seen = set(roots)
    todo = deque(roots)
    while todo:
        t = todo.popleft()
        for r in readers.get(t, ()):
            if r not in seen:
                seen.add(r)
                todo.append(r)
    return seen


def taint_path(pairs, roots, target):
    """A read-from path ``[root, ..., target]`` or None."""
    readers = {}
    for r, w in pairs:
        readers.setdefault(w, set()).add(r)
    parent = {t: None for t in roots}
    todo = deque(roots)
    while todo:
        t = todo.popleft()
        if t == target:
            path = []
            while t is not None:
                path.append(t)
                t = parent[t]
            return path[::-1]
        for r in sorted(readers.get(t, ())):
            if r not in parent:
                parent[r] = t
                todo.append(r)
    return None
