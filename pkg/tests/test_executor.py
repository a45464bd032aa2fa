import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_batch, run_engine
from queuetx.audit import fifo_violations, rc_read_violations
from queuetx.deps import DependencyGraph, KeyGate
from queuetx.errors import EngineError, IncompleteDecisions, Stall
from queuetx.executor import (
    EVENT_LOG_HEADER,
    BatchResult,
    Decision,
    Outcome,
    QueueEngine,
    _Context,
    commit_barrier,
    execute_fragment,
)
from queuetx.planner import Edge, FragmentPriority
from queuetx.storage import COMMITTED, Key, VersionedStore, state_hash
from queuetx.txn import DependencyKind, fragment_transaction, parse_spec, parse_specs

K1, K2, K3 = Key(0, 1), Key(0, 2), Key(0, 3)


def test_single_rmw():
    store, res = run_engine({K1: 10}, parse_specs("TXN 1 | RMW k1 ADD 5"))
    assert res.decisions == {1: Decision.COMMITTED}
    assert store.read_committed(K1) == 15


@pytest.mark.parametrize("mode", ["spec", "cons"])
def test_logic_abort_leaves_state(mode):
    store, res = run_engine({K1: 4, K3: -1}, parse_specs("TXN 1 | CHECK k3 POS | WRITE k1 CONST 9"), mode=mode)
    assert res.decisions == {1: Decision.LOGIC}
    assert store.read_committed(K1) == 4


@pytest.mark.parametrize("E", [1, 2, 4])
@pytest.mark.parametrize("mode", ["spec", "cons"])
def test_two_increments(E, mode):
    txns = parse_specs("TXN 1 | RMW k1 ADD 1\nTXN 2 | RMW k1 ADD 1")
    store, res = run_engine({K1: 7}, txns, E=E, mode=mode)
    assert store.read_committed(K1) == 9
    assert set(res.decisions.values()) == {Decision.COMMITTED}


def _ctx(store, deps, mode="spec"):
    return _Context(store, deps, mode, "ser", 1, True, 100)


def _prep(text, txn_prio_slot, store, deps):
    frags = fragment_transaction(parse_spec(text))
    for f in frags:
        f.priority = FragmentPriority(1, txn_prio_slot, f.seq, 0)
    return frags


def test_execute_fragment_speculative_read_records_taint():
    store = VersionedStore()
    store.bulk_load([(K1, 1), (K2, 5)])
    store.begin_batch()
    deps = DependencyGraph("spec", store)
    deps.register_txns({1: 1, 2: 0})
    ctx = _ctx(store, deps)
    (w,) = _prep("TXN 1 | CHECK k1 POS | RMW k1 ADD 1", 0, store, deps)
    (r,) = _prep("TXN 2 | READ k1", 1, store, deps)
    assert execute_fragment(w, ctx) is Outcome.OK
    assert execute_fragment(r, ctx) is Outcome.OK
    assert deps.taint == {2: {1}}
    assert ctx.log[-1].read_from == 1


def test_execute_fragment_conservative_waits_for_abortable_writer():
    store = VersionedStore()
    store.bulk_load([(K1, 1), (K2, 5)])
    store.begin_batch()
    deps = DependencyGraph("cons", store)
    deps.register_txns({1: 1, 2: 0})
    ctx = _ctx(store, deps, "cons")
    w_check, w_write = _prep("TXN 1 | CHECK k2 POS | RMW k1 ADD 1", 0, store, deps)
    (r,) = _prep("TXN 2 | READ k1", 1, store, deps)
    gate = KeyGate()
    gate.txns.append(1)
    r.gate = (gate, 1)
    assert execute_fragment(w_write, ctx) is Outcome.OK
    assert execute_fragment(r, ctx) is Outcome.PENDING
    assert execute_fragment(w_check, ctx) is Outcome.OK
    assert execute_fragment(r, ctx) is Outcome.OK
    assert ctx.log[-1].read_from == 1 and deps.taint == {}


def test_execute_fragment_skipped_after_cascade():
    store = VersionedStore()
    store.bulk_load([(K1, 1)])
    store.begin_batch()
    deps = DependencyGraph("spec", store)
    deps.register_txns({1: 0})
    deps.cascade_abort(1)
    (f,) = _prep("TXN 1 | RMW k1 ADD 1", 0, store, deps)
    assert execute_fragment(f, _ctx(store, deps)) is Outcome.SKIPPED
    # the placeholder keeps the version list aligned with the plan
    assert store.latest_entry(K1).aborted


def test_speculative_cascade_through_read():
    txns = parse_specs("TXN 1 | CHECK k3 POS | RMW k1 ADD 1\nTXN 2 | READ k1 | RMW k2 ADD 1\nTXN 3 | RMW k2 ADD 1")
    store, res = run_engine({K1: 1, K2: 0, K3: -1}, txns, E=2)
    assert res.decisions == {1: Decision.LOGIC, 2: Decision.CASCADE, 3: Decision.CASCADE}
    assert store.snapshot() == {K1: 1, K2: 0, K3: -1}


def test_conservative_no_cascade():
    txns = parse_specs("TXN 1 | CHECK k3 POS | RMW k1 ADD 1\nTXN 2 | READ k1 | RMW k2 ADD 1\nTXN 3 | RMW k2 ADD 1")
    store, res = run_engine({K1: 1, K2: 0, K3: -1}, txns, E=2, mode="cons")
    assert res.decisions == {1: Decision.LOGIC, 2: Decision.COMMITTED, 3: Decision.COMMITTED}
    assert store.snapshot() == {K1: 1, K2: 2, K3: -1}


def test_committed_read_no_taint():
    store = VersionedStore()
    store.bulk_load([(K1, 1)])
    with QueueEngine(store, keep_deps=True) as eng:
        eng.process(parse_specs("TXN 1 | READ k1"))
    assert json.loads(eng.last_deps_json)["taint"] == {}


def test_own_writes_visible():
    store, res = run_engine({K1: 1}, parse_specs("TXN 1 | RMW k1 ADD 4 | RMW k1 MUL 3 | CHECK k1 NEQ 15"))
    assert res.decisions[1] is Decision.LOGIC
    store, res = run_engine({K1: 1}, parse_specs("TXN 1 | RMW k1 ADD 4 | RMW k1 MUL 3 | CHECK k1 NEQ 14"))
    assert store.read_committed(K1) == 15


def test_commit_barrier_cases():
    store = VersionedStore()
    store.bulk_load([(K1, 1)])
    deps = DependencyGraph()
    empty = BatchResult(1, {}, [], 0, 0)
    commit_barrier(empty, store, deps)  # no-op
    assert store.read_committed(K1) == 1
    with pytest.raises(IncompleteDecisions):
        commit_barrier(BatchResult(1, {}, [5], 0, 0), store, deps)
    with QueueEngine(store) as eng:
        res = eng.process([])
    assert res.decisions == {} and eng.batch_id == 1


def test_mixed_commit_abort_installs_committed_only():
    txns = parse_specs("TXN 1 | RMW k1 ADD 1\nTXN 2 | CHECK k2 POS | RMW k1 ADD 10\nTXN 3 | RMW k2 ADD 5")
    store, res = run_engine({K1: 0, K2: 0}, txns, mode="cons")
    assert [res.decisions[t] for t in (1, 2, 3)] == [Decision.COMMITTED, Decision.LOGIC, Decision.COMMITTED]
    assert store.snapshot() == {K1: 1, K2: 5}


def test_stall_on_unsatisfiable_input():
    store = VersionedStore()
    store.bulk_load([(K1, 1)])
    eng = QueueEngine(store, max_polls=50)
    spec = parse_spec("TXN 1 | RMW k1 ADD 1")
    real = eng._plan_one

    def sabotaged(p, batch):
        out = real(p, batch)
        # an input nobody will ever publish
        (frag,) = [f for q in out.queues for f in q.fragments]
        frag.data_inputs = (((99, 0), 0),)
        eng.deps.register_edges([Edge((99, 0), (1, 0), DependencyKind.DATA, 0)])
        return out

    eng._plan_one = sabotaged
    with pytest.raises(Stall) as info:
        eng.process([spec])
    assert info.value.diagnostics["missing"] == [((99, 0), 0)]
    assert store.read_committed(K1) == 1 and not store.batch_active


def test_duplicate_txn_ids_rejected():
    store = VersionedStore()
    store.bulk_load([(K1, 1)])
    with pytest.raises(EngineError):
        QueueEngine(store).process(parse_specs("TXN 1 | READ k1\nTXN 1 | READ k1"))


def test_event_log_format():
    _, res = run_engine({K1: 1}, parse_specs("TXN 1 | RMW k1 ADD 1\nTXN 2 | READ k1"), event_log=True)
    lines = [e.csv() for e in res.events]
    assert EVENT_LOG_HEADER.split(",")[:7] == ["batch", "txn", "frag_seq", "key", "executor", "outcome", "ts"]
    assert lines[0].startswith("1,1,0,0:1,0,OK,")
    assert lines[1].endswith(",1")  # txn 2 read txn 1's version


def test_batch_ids_advance_and_state_carries():
    store = VersionedStore()
    store.bulk_load([(K1, 1)])
    with QueueEngine(store, 2, 2) as eng:
        eng.process(parse_specs("TXN 1 | RMW k1 ADD 1"))
        res = eng.process(parse_specs("TXN 2 | RMW k1 MUL 5"))
    assert res.batch_id == 2 and store.read_committed(K1) == 10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["spec", "cons"]), st.sampled_from(["ser", "rc"]))
def test_determinism_and_audits(seed, mode, iso):
    state, txns = random_batch(seed, max_txns=40, max_keys=10, abortable_fraction=0.2)
    ref = None
    for P, E in [(1, 1), (2, 3), (4, 4), (3, 2)]:
        store, res = run_engine(state, txns, P, E, mode, iso, event_log=True)
        got = (state_hash(store.snapshot()), res.decisions)
        if ref is None:
            ref = got
        assert got == ref
        assert fifo_violations(res.events) == []
        assert rc_read_violations(res.events) == []
        if mode == "cons":
            assert Decision.CASCADE not in res.decisions.values()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["spec", "cons"]))
def test_no_aborts_without_abortable_fragments(seed, mode):
    state, txns = random_batch(seed, max_txns=40, max_keys=4, abortable_fraction=0.0)
    _, res = run_engine(state, txns, 2, 4, mode)
    assert set(res.decisions.values()) <= {Decision.COMMITTED}


def test_conservative_taint_empty():
    state, txns = random_batch(7, max_txns=60, max_keys=5, abortable_fraction=0.5)
    store = VersionedStore()
    store.bulk_load(state.items())
    with QueueEngine(store, 2, 2, "cons", keep_deps=True) as eng:
        eng.process(txns)
    assert json.loads(eng.last_deps_json)["taint"] == {}
