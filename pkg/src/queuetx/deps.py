"""Shared dependency registry: data edges and write-once value channels,
transaction status, speculative read-from taint, and cascading aborts.

Channels are published without taking a lock (``dict.setdefault`` is atomic
under the GIL); status transitions, taint and version-handle bookkeeping share
one mutex so that an abort can never miss a concurrently registered write.
"""
from __future__ import annotations

import enum
import json
import threading
from collections import deque

from .errors import DoublePublish, DoubleResolve, DuplicateEdge
from .txn import DependencyKind, ExecMode


class TxnStatus(str, enum.Enum):
    ACTIVE = "ACTIVE"
    COMMITTED = "COMMITTED"
    ABORTED = "ABORTED"


ACTIVE = TxnStatus.ACTIVE
COMMITTED = TxnStatus.COMMITTED
ABORTED = TxnStatus.ABORTED


class KeyGate:
    """Abortable writers of one record, in priority order.

    A conservative-mode reader waits until every writer listed before it has
    resolved; ``resolved`` is a monotone prefix pointer into ``txns``.
    """

    __slots__ = ("txns", "resolved")

    def __init__(self):
        self.txns = []
        self.resolved = 0


class DependencyGraph:
    def __init__(self, mode=ExecMode.SPECULATIVE, store=None, strict=False):
        self.mode = ExecMode(mode)
        self.store = store
        self.strict = strict
        self._lock = threading.Lock()
        self.clear()

    def clear(self):
        self._inputs = {}
        self._out = {}
        self._edge_set = set()
        self._channels = {}
        self.status = {}
        self._abortable_left = {}
        self._abortable_txns = set()
        self._handles = {}
        self.taint = {}
        self._readers = {}

    # -- planning --------------------------------------------------------

    def register_txns(self, abortable_frags: dict) -> None:
        """Enter txns as ACTIVE; values are their abortable-fragment counts."""
        with self._lock:
            for txn_id, n in abortable_frags.items():
                self.status[txn_id] = ACTIVE
                self._abortable_left[txn_id] = n
                if n:
                    self._abortable_txns.add(txn_id)

    def register_edges(self, edges) -> None:
        with self._lock:
            if self.strict:
                for e in edges:
                    ident = (e.src, e.dst, e.kind, e.slot)
                    if ident in self._edge_set:
                        raise DuplicateEdge(f"{e.kind.value} {e.src}->{e.dst}")
                    self._edge_set.add(ident)
            for e in edges:
                self._out.setdefault(e.src, {}).setdefault(e.kind, []).append(e.dst)
                if e.kind is DependencyKind.DATA:
                    self._inputs.setdefault(e.dst, []).append((e.src, e.slot))

    def edges_of(self, frag_id, kind=None) -> list:
        out = self._out.get(frag_id, {})
        if kind is not None:
            return list(out.get(kind, ()))
        return [(k, d) for k, ds in out.items() for d in ds]

    def is_abortable_txn(self, txn_id) -> bool:
        return txn_id in self._abortable_txns

    # -- value channels ---------------------------------------------------

    def publish(self, producer, slot, value) -> None:
        cell = (value,)
        if self._channels.setdefault((producer, slot), cell) is not cell:
            raise DoublePublish(f"channel {producer}/{slot} already set")

    def channel(self, producer, slot, default=None):
        cell = self._channels.get((producer, slot))
        return default if cell is None else cell[0]

    def poll_ready(self, frag):
        """Non-blocking readiness check.

        Returns ``(inputs, missing)``: ``inputs`` maps slot to published value;
        ``missing`` lists unpublished ``(producer, slot)`` channels and, in
        conservative mode, ``("gate", txn_id)`` for an unresolved abortable
        writer the fragment must wait for. Ready iff ``missing`` is empty.
        """
        frag_id = frag if isinstance(frag, tuple) else frag.frag_id
        inputs = {}
        missing = []
        wanted = self._inputs.get(frag_id)
        if wanted:
            channels = self._channels
            for src, slot in wanted:
                cell = channels.get((src, slot))
                if cell is None:
                    missing.append((src, slot))
                else:
                    inputs[slot] = cell[0]
        if self.mode is ExecMode.CONSERVATIVE and not isinstance(frag, tuple) and frag.gate is not None:
            gate, upto = frag.gate
            status = self.status
            txns = gate.txns
            i = gate.resolved
            while i < upto and status[txns[i]] is not ACTIVE:
                i += 1
            if i > gate.resolved:
                gate.resolved = i
            if i < upto:
                missing.append(("gate", txns[i]))
        return inputs, missing

    # -- status, taint, aborts ---------------------------------------------

    def register_write(self, txn_id, entry) -> None:
        """Remember a speculative version so an abort of ``txn_id`` can mark it."""
        with self._lock:
            if self.status.get(txn_id) is ABORTED:
                entry.aborted = True
            else:
                self._handles.setdefault(txn_id, []).append(entry)

    def _mark_aborted(self, txn_id):
        # versions first: a conservative reader proceeds as soon as it sees the status
        for entry in self._handles.pop(txn_id, ()):
            if self.store is not None:
                self.store.mark_version_aborted(entry, strict=False)
            else:
                entry.aborted = True
        self.status[txn_id] = ABORTED

    def record_taint(self, reader, writer) -> bool:
        """Note that ``reader`` consumed a speculative value of ``writer``.

        Returns False when the reader is (now) aborted because the writer
        already was.
        """
        with self._lock:
            self.taint.setdefault(reader, set()).add(writer)
            self._readers.setdefault(writer, set()).add(reader)
            if self.status.get(writer) is ABORTED:
                self._cascade(reader)
            return self.status.get(reader) is not ABORTED

    def cascade_abort(self, root) -> set:
        """Abort ``root`` and, transitively, every txn that read its versions.

        Returns the txns newly aborted by this call.
        """
        with self._lock:
            return self._cascade(root)

    def _cascade(self, root) -> set:
        aborted = set()
        todo = deque([root])
        while todo:
            t = todo.popleft()
            if self.status.get(t) is ABORTED:
                continue
            self._mark_aborted(t)
            aborted.add(t)
            todo.extend(self._readers.get(t, ()))
        return aborted

    def resolve_txn(self, txn_id, decision) -> None:
        decision = TxnStatus(decision)
        with self._lock:
            if self.status.get(txn_id, ACTIVE) is not ACTIVE:
                raise DoubleResolve(f"txn {txn_id} already {self.status[txn_id].value}")
            if decision is ABORTED:
                self._mark_aborted(txn_id)
            else:
                self.status[txn_id] = decision
                self._handles.pop(txn_id, None)

    def abortable_done(self, txn_id) -> None:
        """One abortable fragment of ``txn_id`` ran without failing its check.

        In conservative mode the txn commits as soon as all of them have,
        which opens the gates of readers waiting on it.
        """
        with self._lock:
            left = self._abortable_left[txn_id] - 1
            self._abortable_left[txn_id] = left
            if left == 0 and self.mode is ExecMode.CONSERVATIVE and self.status[txn_id] is ACTIVE:
                self.status[txn_id] = COMMITTED
                self._handles.pop(txn_id, None)

    def is_aborted(self, txn_id) -> bool:
        return self.status.get(txn_id) is ABORTED

    # -- debug -------------------------------------------------------------

    def to_json(self) -> str:
        edges = [
            {"src": list(src), "dst": list(dst), "kind": kind.value}
            for src, kinds in sorted(self._out.items())
            for kind, dsts in kinds.items()
            for dst in dsts
        ]
        return json.dumps(
            {
                "edges": edges,
                "taint": {str(r): sorted(ws) for r, ws in sorted(self.taint.items())},
                "status": {str(t): s.value for t, s in sorted(self.status.items())},
            },
            indent=1,
        )
