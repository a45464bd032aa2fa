# %% [markdown]
# Workload generators. YCSB-style transactions draw records from a Zipf
# distribution; the simplified TPC-C mix concentrates on warehouse and
# district rows.
from collections import Counter

import numpy as np

from queuetx import TpccConfig, YcsbConfig, gen_tpcc, gen_ycsb
from queuetx.txn import format_spec
from queuetx.workloads import TPCC_TABLES, ZipfSampler, is_payment, zipf_pmf

# %% Zipf skew: the share of draws landing on the 10 hottest of 1000 keys
rng = np.random.default_rng(0)
for theta in (0.0, 0.5, 0.99):
    x = ZipfSampler(1000, theta).sample(rng, 100_000)
    print(f"theta={theta}: empirical {np.mean(x < 10):.3f}  analytic {zipf_pmf(1000, theta)[:10].sum():.3f}")

# %% a few YCSB transactions in the text format
for spec in gen_ycsb(YcsbConfig(ops_per_txn=4, abortable_fraction=0.5, copy_fraction=0.3, seed=9), 3):
    print(format_spec(spec))

# %% TPC-C: which tables the mix touches
txns = gen_tpcc(TpccConfig(seed=3), 2000)
print("payments:", sum(map(is_payment, txns)), "of", len(txns))
touches = Counter(TPCC_TABLES[s.key[0]] for t in txns for s in t.steps)
for table, n in touches.most_common():
    print(f"{table:20s} {n}")
