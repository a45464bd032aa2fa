"""Shared fixtures-by-function for the test suite."""
from __future__ import annotations

import numpy as np

from queuetx.executor import QueueEngine
from queuetx.storage import Key, VersionedStore
from queuetx.txn import Compute, Step, StepKind, TxnSpec, validate_spec

KINDS = ("READ", "RMW_ADD", "RMW_MUL", "RMW_COPY", "WRITE_CONST", "WRITE_COPY", "CHECK")


def random_spec(rng: np.random.Generator, txn_id: int, n_keys: int, abortable: bool, max_steps: int = 6) -> TxnSpec:
    """A random well-formed spec over keys ``k0..k{n_keys-1}``.

    Uses every step kind and compute tag; checks compare against a threshold
    so that roughly half of them fail on the value ranges produced here.
    """
    while True:
        n = int(rng.integers(1, max_steps + 1))
        steps = []
        slots = []
        for i in range(n):
            key = Key(0, int(rng.integers(0, n_keys)))
            kind = KINDS[int(rng.integers(0, len(KINDS) - 1))]
            if kind in ("RMW_COPY", "WRITE_COPY") and not slots:
                kind = "RMW_ADD"
            if kind == "READ":
                steps.append(Step(key, StepKind.READ))
            elif kind == "RMW_ADD":
                steps.append(Step(key, StepKind.RMW, Compute.ADD, int(rng.integers(-5, 6))))
            elif kind == "RMW_MUL":
                steps.append(Step(key, StepKind.RMW, Compute.MUL, int(rng.integers(-2, 3))))
            elif kind == "RMW_COPY":
                steps.append(Step(key, StepKind.RMW, Compute.COPY, 0, (int(rng.choice(slots)),)))
            elif kind == "WRITE_CONST":
                steps.append(Step(key, StepKind.WRITE, Compute.CONST, int(rng.integers(-3, 10))))
            else:
                steps.append(Step(key, StepKind.WRITE, Compute.COPY, 0, (int(rng.choice(slots)),)))
            if steps[-1].kind is not StepKind.WRITE:
                slots.append(i)
        if abortable:
            key = Key(0, int(rng.integers(0, n_keys)))
            tag = (Compute.POS, Compute.NONNEG, Compute.NEQ)[int(rng.integers(0, 3))]
            chk = Step(key, StepKind.READ_ABORTCHECK, tag, int(rng.integers(0, 4)))
            at = int(rng.integers(0, len(steps) + 1))
            # inserting shifts later slot numbers
            steps = [
                s._replace(inputs=tuple(x + 1 if x >= at else x for x in s.inputs)) for s in steps
            ]
            steps.insert(at, chk)
        spec = TxnSpec.from_steps(txn_id, steps)
        if not validate_spec(spec):
            return spec


def random_batch(seed: int, max_txns: int = 64, max_keys: int = 32, abortable_fraction: float = 0.1):
    """``(initial_state, txns)``; every key is preloaded."""
    rng = np.random.default_rng(seed)
    n_txns = int(rng.integers(1, max_txns + 1))
    n_keys = int(rng.integers(1, max_keys + 1))
    state = {Key(0, r): int(rng.integers(-3, 10)) for r in range(n_keys)}
    txns = [
        random_spec(rng, t + 1, n_keys, bool(rng.random() < abortable_fraction))
        for t in range(n_txns)
    ]
    return state, txns


def run_engine(state, txns, P=1, E=1, mode="spec", isolation="ser", event_log=False, **kw):
    store = VersionedStore(strict=True)
    store.bulk_load(state.items())
    with QueueEngine(store, P, E, mode, isolation, strict=True, event_log=event_log, **kw) as eng:
        result = eng.process(txns)
    return store, result
