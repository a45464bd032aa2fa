# %% [markdown]
# Speculative vs conservative execution. Speculative executors let readers
# see uncommitted writes of abortable transactions; if the writer aborts,
# every transitive reader is cascaded. Conservative executors hold readers
# back until abortable writers have resolved, so nothing cascades.
from collections import Counter

from queuetx import QueueEngine, VersionedStore, YcsbConfig, gen_ycsb, replay_committed, serial_execute
from queuetx.audit import taint_path
from queuetx.executor import Decision
from queuetx.workloads import ycsb_initial_state

cfg = YcsbConfig(record_count=64, ops_per_txn=4, zipf_theta=0.99, abortable_fraction=0.2, poison_fraction=0.2, seed=5)
initial = ycsb_initial_state(cfg)
txns = gen_ycsb(cfg, 200)

# %%
results = {}
for mode in ("spec", "cons"):
    store = VersionedStore()
    store.bulk_load(initial.items())
    with QueueEngine(store, 2, 4, mode) as eng:
        res = eng.process(txns)
    results[mode] = (store.snapshot(), res)
    print(mode, dict(Counter(d.value for d in res.decisions.values())))

# %% conservative matches the serial oracle exactly
oracle = serial_execute(initial, txns)
state, res = results["cons"]
print("cons == oracle:", res.decisions == oracle.decisions and state == oracle.final_state)

# %% speculative commits a subset; its state is a replay of that subset
state, res = results["spec"]
print("spec == replay(committed):", state == replay_committed(initial, txns, res.committed).final_state)

# %% and every cascade is explained by a chain of speculative reads
pairs = {(r, w) for r, ws in res.read_from.items() for w in ws}
roots = [t for t, d in res.decisions.items() if d is Decision.LOGIC]
victim = next((t for t, d in sorted(res.decisions.items()) if d is Decision.CASCADE), None)
if victim is not None:
    print(f"txn {victim} cascaded via", " -> ".join(map(str, taint_path(pairs, roots, victim))))
