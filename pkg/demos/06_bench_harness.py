# %% [markdown]
# The bench harness as a library. The same runs are available on the command
# line, e.g. ``bench run --engine queue -P 2 -E 4 --format human``.
from queuetx.bench import BenchConfig, compare, emit, run
from queuetx.workloads import TpccConfig, YcsbConfig

ycsb = YcsbConfig(zipf_theta=0.99, abortable_fraction=0.05, seed=1)
queue = run(BenchConfig(engine="queue", mode="cons", planners=2, executors=4, workload=ycsb, txn_count=5000))
lock = run(BenchConfig(engine="2pl", executors=4, workload=ycsb, txn_count=5000))
print(emit(queue, "human").decode())
print(emit(lock, "human").decode())

# %% reports compare only when the workload is identical
c = compare(queue, lock)
print(f"speedup {c.speedup:.2f}, commit-rate delta {c.commit_rate_delta:+.4f}")

# %% TPC-C, one warehouse
tpcc = run(BenchConfig(engine="queue", mode="cons", executors=4, workload=TpccConfig(), txn_count=5000))
print(emit(tpcc, "csv").decode())
