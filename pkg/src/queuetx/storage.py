"""In-memory record store with one committed value per record and a
batch-local list of speculative versions.

Values are signed 64-bit integers held as Python ints; ``value_hex`` gives
their 8-byte big-endian encoding for dumps.
"""
from __future__ import annotations

from typing import Iterable, Iterator, Mapping, NamedTuple

from .errors import (
    AlreadyAborted,
    BatchNotActive,
    IncompleteDecisions,
    KeyNotFound,
    PriorityOrderViolation,
)

COMMITTED = "COMMITTED"

_MASK64 = (1 << 64) - 1
_SIGN64 = 1 << 63


class Key(NamedTuple):
    table_id: int
    record_id: int

    def __str__(self):
        if self.table_id == 0:
            return f"k{self.record_id}"
        return f"{self.table_id}:{self.record_id}"


def wrap64(value: int) -> int:
    """Reduce an int to the signed 64-bit range (two's complement wraparound)."""
    value &= _MASK64
    return value - (1 << 64) if value & _SIGN64 else value


def value_hex(value: int) -> str:
    return (value & _MASK64).to_bytes(8, "big").hex()


def value_from_bytes(raw: bytes) -> int:
    return int.from_bytes(raw, "big", signed=True)


class SpecEntry:
    """One speculative version. The entry object doubles as its own handle."""

    __slots__ = ("key", "txn_id", "priority", "value", "aborted")

    def __init__(self, key, txn_id, priority, value, aborted=False):
        self.key = key
        self.txn_id = txn_id
        self.priority = priority
        self.value = value
        self.aborted = aborted

    def __repr__(self):
        state = "aborted" if self.aborted else "live"
        return f"SpecEntry({self.key}, T{self.txn_id}, {tuple(self.priority)}, {self.value}, {state})"


class VersionedStore:
    """Committed values plus per-key speculative version lists.

    All writes to one key come from a single executor thread, so appends to a
    version list never race with each other; readers on other threads only
    ever look at list slices, which the GIL keeps consistent.
    """

    def __init__(self, strict: bool = False):
        self.strict = strict
        self._committed: dict[Key, int] = {}
        self._spec: dict[Key, list[SpecEntry]] = {}
        self.batch_active = False

    # -- loading ---------------------------------------------------------

    def bulk_load(self, items: Iterable[tuple[Key, int | bytes]]) -> int:
        n = 0
        for key, value in items:
            if isinstance(value, (bytes, bytearray)):
                value = value_from_bytes(value)
            self._committed[Key(*key)] = wrap64(value)
            n += 1
        return n

    def put_committed(self, key: Key, value: int) -> None:
        """Write straight to committed state; used by the locking baseline."""
        self._committed[key] = value

    def __contains__(self, key):
        return key in self._committed

    def __len__(self):
        return len(self._committed)

    def keys(self):
        return self._committed.keys()

    def snapshot(self) -> dict[Key, int]:
        return dict(self._committed)

    # -- reads -----------------------------------------------------------

    def read_committed(self, key: Key) -> int:
        try:
            return self._committed[key]
        except KeyError:
            raise KeyNotFound(key) from None

    def read_latest(self, key: Key):
        """Return ``(value, writer)`` for the newest live version of ``key``.

        ``writer`` is the txn id of the speculative writer or ``COMMITTED``.
        """
        versions = self._spec.get(key)
        if versions:
            for entry in reversed(versions):
                if not entry.aborted:
                    return entry.value, entry.txn_id
        try:
            return self._committed[key], COMMITTED
        except KeyError:
            raise KeyNotFound(key) from None

    def latest_entry(self, key: Key) -> SpecEntry | None:
        """Newest speculative entry for ``key`` including aborted ones."""
        versions = self._spec.get(key)
        return versions[-1] if versions else None

    def spec_versions(self, key: Key) -> list[SpecEntry]:
        return list(self._spec.get(key, ()))

    # -- batch writes ----------------------------------------------------

    def begin_batch(self) -> None:
        self.batch_active = True

    def write_speculative(self, key: Key, value, txn_id, priority, aborted=False) -> SpecEntry:
        if not self.batch_active:
            raise BatchNotActive("speculative write outside an active batch")
        versions = self._spec.get(key)
        if versions is None:
            versions = self._spec.setdefault(key, [])
        elif versions[-1].priority >= priority:
            raise PriorityOrderViolation(
                f"{key}: write at {tuple(priority)} after {tuple(versions[-1].priority)}"
            )
        entry = SpecEntry(key, txn_id, priority, value, aborted)
        versions.append(entry)
        return entry

    def mark_version_aborted(self, entry: SpecEntry, strict: bool | None = None) -> None:
        if entry.aborted:
            if self.strict if strict is None else strict:
                raise AlreadyAborted(repr(entry))
            return
        entry.aborted = True

    def install_batch(self, commit_decisions: Mapping[int, bool]) -> int:
        """Make the newest committed version of every record durable in memory.

        ``commit_decisions`` maps txn id to True (commit) or False (abort) and
        must cover every txn that wrote a version. Returns the number of
        records whose committed value changed.
        """
        missing = {
            e.txn_id
            for versions in self._spec.values()
            for e in versions
            if e.txn_id not in commit_decisions
        }
        if missing:
            raise IncompleteDecisions(missing)
        installed = 0
        committed = self._committed
        for key, versions in self._spec.items():
            for entry in reversed(versions):
                if not entry.aborted and commit_decisions[entry.txn_id]:
                    committed[key] = entry.value
                    installed += 1
                    break
        self._spec = {}
        self.batch_active = False
        return installed

    def discard_batch(self) -> None:
        """Drop all speculative versions without touching committed state."""
        self._spec = {}
        self.batch_active = False

    # -- dumps -----------------------------------------------------------

    def dump_lines(self) -> Iterator[str]:
        return dump_state_lines(self._committed)

    def dump_csv(self) -> str:
        return "".join(line + "\n" for line in self.dump_lines())


def dump_state_lines(state: Mapping[Key, int]) -> Iterator[str]:
    """Sorted ``table,record,value_hex`` lines for any key -> value mapping."""
    for key in sorted(state):
        yield f"{key[0]},{key[1]},{value_hex(state[key])}"


def state_hash(state: Mapping[Key, int]) -> str:
    import hashlib

    h = hashlib.sha256()
    for line in dump_state_lines(state):
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()
