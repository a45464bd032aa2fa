import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from queuetx.audit import reachable
from queuetx.deps import ABORTED, ACTIVE, COMMITTED, DependencyGraph, KeyGate
from queuetx.errors import DoublePublish, DoubleResolve, DuplicateEdge
from queuetx.planner import Edge, FragmentPriority
from queuetx.storage import COMMITTED as STORE_COMMITTED, Key, VersionedStore
from queuetx.txn import DependencyKind, ExecMode, fragment_transaction, parse_spec

A, B = (1, 0), (1, 1)


def data_edge(slot=0):
    return Edge(A, B, DependencyKind.DATA, slot)


def test_register_data_edge_pending():
    g = DependencyGraph()
    g.register_edges([data_edge()])
    inputs, missing = g.poll_ready(B)
    assert inputs == {} and missing == [(A, 0)]


def test_no_edges_ready():
    g = DependencyGraph()
    g.register_edges([])
    assert g.poll_ready(B) == ({}, [])


def test_duplicate_edge_strict():
    g = DependencyGraph(strict=True)
    g.register_edges([data_edge()])
    with pytest.raises(DuplicateEdge):
        g.register_edges([data_edge()])
    DependencyGraph().register_edges([data_edge(), data_edge()])  # tolerated outside strict mode


def test_publish_then_ready():
    g = DependencyGraph()
    g.register_edges([data_edge()])
    g.publish(A, 0, 42)
    assert g.poll_ready(B) == ({0: 42}, [])


def test_double_publish():
    g = DependencyGraph()
    g.publish(A, 0, 42)
    with pytest.raises(DoublePublish):
        g.publish(A, 0, 43)
    assert g.channel(A, 0) == 42


def test_partial_inputs_pending():
    g = DependencyGraph()
    g.register_edges([Edge((1, 0), (1, 2), DependencyKind.DATA, 0), Edge((1, 1), (1, 2), DependencyKind.DATA, 1)])
    g.publish((1, 0), 0, 5)
    assert g.poll_ready((1, 2)) == ({0: 5}, [((1, 1), 1)])


def test_concurrent_publish_single_value():
    for trial in range(20):
        g = DependencyGraph()
        start = threading.Barrier(9)
        seen = []
        wins = []

        def pub(v):
            start.wait()
            try:
                g.publish(A, 0, v)
                wins.append(v)
            except DoublePublish:
                pass

        def poll():
            start.wait()
            for _ in range(200):
                v = g.channel(A, 0)
                if v is not None:
                    seen.append(v)

        threads = [threading.Thread(target=pub, args=(v,)) for v in range(4)]
        threads += [threading.Thread(target=poll) for _ in range(5)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(wins) == 1
        assert set(seen) <= {wins[0]}
        assert all(g.channel(A, 0) == wins[0] for _ in range(1000))


def test_conservative_gate_pending_until_resolved():
    (frag,) = fragment_transaction(parse_spec("TXN 2 | READ k1"))
    g = DependencyGraph(ExecMode.CONSERVATIVE)
    g.register_txns({1: 1, 2: 0})
    gate = KeyGate()
    gate.txns.append(1)
    frag.gate = (gate, 1)
    assert g.poll_ready(frag)[1] == [("gate", 1)]
    g.abortable_done(1)
    assert g.status[1] is COMMITTED
    assert g.poll_ready(frag) == ({}, [])


def test_record_taint():
    g = DependencyGraph()
    g.register_txns({1: 1, 2: 0})
    assert g.record_taint(2, 1)
    assert g.taint == {2: {1}}


def test_chain_cascade():
    g = DependencyGraph()
    g.register_txns({1: 1, 2: 0, 3: 0})
    g.record_taint(2, 1)
    g.record_taint(3, 2)
    assert g.cascade_abort(1) == {1, 2, 3}
    assert g.cascade_abort(1) == set()  # idempotent


def test_diamond_cascade_and_untainted():
    g = DependencyGraph()
    g.register_txns({t: 0 for t in range(1, 6)})
    for r, w in [(2, 1), (3, 1), (4, 2), (4, 3)]:
        g.record_taint(r, w)
    assert g.cascade_abort(1) == {1, 2, 3, 4}
    assert g.status[5] is ACTIVE


def test_no_readers():
    g = DependencyGraph()
    g.register_txns({1: 1})
    assert g.cascade_abort(1) == {1}


def test_taint_after_abort_aborts_reader():
    g = DependencyGraph()
    g.register_txns({1: 1, 2: 0})
    g.cascade_abort(1)
    assert not g.record_taint(2, 1)
    assert g.is_aborted(2)


def test_cascade_marks_versions():
    store = VersionedStore()
    store.bulk_load([(Key(0, 1), 10)])
    store.begin_batch()
    g = DependencyGraph(store=store)
    g.register_txns({1: 1, 2: 0})
    e1 = store.write_speculative(Key(0, 1), 11, 1, FragmentPriority(1, 0, 0, 0))
    g.register_write(1, e1)
    e2 = store.write_speculative(Key(0, 1), 12, 2, FragmentPriority(1, 1, 0, 0))
    g.register_write(2, e2)
    g.record_taint(2, 1)
    g.cascade_abort(1)
    assert e1.aborted and e2.aborted
    assert store.read_latest(Key(0, 1)) == (10, STORE_COMMITTED)
    # a write registered after the abort is marked immediately
    e3 = store.write_speculative(Key(0, 1), 13, 1, FragmentPriority(1, 2, 0, 0))
    g.register_write(1, e3)
    assert e3.aborted


def test_resolve():
    g = DependencyGraph()
    g.register_txns({1: 0, 2: 1})
    g.resolve_txn(1, COMMITTED)
    g.resolve_txn(2, ABORTED)
    assert g.status[1] is COMMITTED and g.status[2] is ABORTED
    with pytest.raises(DoubleResolve):
        g.resolve_txn(1, COMMITTED)
    with pytest.raises(DoubleResolve):
        g.resolve_txn(2, COMMITTED)


def test_clear_between_batches():
    g = DependencyGraph()
    g.register_edges([data_edge()])
    g.publish(A, 0, 1)
    g.register_txns({1: 0})
    g.clear()
    assert g.poll_ready(B) == ({}, []) and g.status == {} and g.channel(A, 0) is None


def test_to_json():
    import json

    g = DependencyGraph()
    g.register_txns({1: 1, 2: 0})
    g.register_edges([data_edge()])
    g.record_taint(2, 1)
    doc = json.loads(g.to_json())
    assert doc["taint"] == {"2": [1]}
    assert doc["edges"][0]["kind"] == "DATA"


def random_taint_graph(rng, n):
    """Random DAG of read-from pairs (readers have larger ids), shaped as
    chains, diamonds or arbitrary forward edges."""
    shape = rng.integers(0, 3)
    if shape == 0:
        return [(i + 1, i) for i in range(n - 1)]
    if shape == 1:
        pairs = []
        for base in range(0, n - 3, 3):
            pairs += [(base + 1, base), (base + 2, base), (base + 3, base + 1), (base + 3, base + 2)]
        return pairs
    return [(r, w) for r in range(n) for w in range(r) if rng.random() < 2.0 / n]


def test_cascade_closure_constructed_graphs():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(2, 30))
        pairs = random_taint_graph(rng, n)
        g = DependencyGraph()
        g.register_txns({t: 0 for t in range(n)})
        for r, w in pairs:
            g.record_taint(r, w)
        root = int(rng.integers(0, n))
        assert g.cascade_abort(root) == reachable(pairs, [root])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), max_size=40), st.lists(st.integers(0, 15), min_size=1, max_size=4))
def test_cascade_closure_property(pairs, roots):
    g = DependencyGraph()
    g.register_txns({t: 0 for t in range(16)})
    for r, w in pairs:
        g.record_taint(r, w)
    aborted = set()
    for root in roots:
        got = g.cascade_abort(root)
        assert not (got & aborted)
        aborted |= got
    assert aborted == reachable(pairs, roots)
    # monotone status
    assert all(g.status[t] is (ABORTED if t in aborted else ACTIVE) for t in range(16))
