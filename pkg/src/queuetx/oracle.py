"""Single-threaded serial reference execution.

Works on transaction specs directly, never on fragments, so it checks the
fragmenter as well as the engine.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .errors import KeyNotFound, UncoveredKey
from .executor import Decision
from .storage import Key, dump_state_lines, state_hash
from .txn import IsolationLevel, StepKind, evaluate


@dataclass
class OracleResult:
    final_state: dict
    decisions: dict

    def dump_lines(self):
        return dump_state_lines(self.final_state)

    def state_hash(self) -> str:
        return state_hash(self.final_state)

    @property
    def committed(self) -> list:
        return [t for t, d in self.decisions.items() if d is Decision.COMMITTED]


def serial_execute(initial_state: Mapping, batch, isolation=IsolationLevel.SERIALIZABLE) -> OracleResult:
    """Run ``batch`` one txn at a time in the given order.

    A failed abort check discards the txn's writes. Under read-committed
    isolation, keys a txn only reads are read from ``initial_state`` (the
    batch's committed snapshot) instead of the running state.
    """
    txns = getattr(batch, "txns", batch)
    read_committed = IsolationLevel(isolation) is IsolationLevel.READ_COMMITTED
    state = {Key(*k): v for k, v in initial_state.items()}
    snapshot = dict(state) if read_committed else None
    decisions = {}
    for spec in txns:
        covered = spec.read_set | spec.write_set
        local = {}
        slots = {}
        ok = True
        for i, step in enumerate(spec.steps):
            key = step.key
            if key not in covered:
                raise UncoveredKey(key, spec.txn_id)
            if step.kind is StepKind.WRITE:
                current = local.get(key)
            elif key in local:
                current = local[key]
            else:
                source = snapshot if read_committed and key not in spec.write_set else state
                try:
                    current = source[key]
                except KeyError:
                    raise KeyNotFound(key) from None
            slot_value, new, ok = evaluate(step, current, slots)
            if not ok:
                break
            if step.kind is not StepKind.WRITE:
                slots[i] = slot_value
            local[key] = new
        if ok:
            for key in spec.write_set:
                if key in local:
                    state[key] = local[key]
            decisions[spec.txn_id] = Decision.COMMITTED
        else:
            decisions[spec.txn_id] = Decision.LOGIC
    return OracleResult(dict(sorted(state.items())), decisions)


def replay_committed(initial_state: Mapping, txns, committed_ids, isolation=IsolationLevel.SERIALIZABLE) -> OracleResult:
    """Serial replay restricted to ``committed_ids``, keeping the given order."""
    keep = set(committed_ids)
    return serial_execute(initial_state, [t for t in getattr(txns, "txns", txns) if t.txn_id in keep], isolation)
