"""Deterministic batch transaction execution with priority queues.

Transactions are split into single-record fragments, planned into
priority-ordered per-executor queues, and executed without record locks. A
batch barrier commits or aborts every transaction at once, so the outcome is a
pure function of the input batch.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    EngineError,
    InvalidSpec,
    KeyNotFound,
    MismatchedWorkload,
    Stall,
    UncoveredKey,
)
from .storage import COMMITTED, Key, VersionedStore, state_hash  # noqa: E402
from .txn import (  # noqa: E402
    DependencyKind,
    ExecMode,
    IsolationLevel,
    Step,
    StepKind,
    TxnSpec,
    fragment_transaction,
    parse_spec,
    parse_specs,
)
from .planner import Batch, FragmentPriority, form_batch, plan  # noqa: E402
from .deps import DependencyGraph  # noqa: E402
from .executor import Decision, QueueEngine  # noqa: E402
from .oracle import replay_committed, serial_execute  # noqa: E402
from .workloads import TpccConfig, YcsbConfig, gen_tpcc, gen_ycsb, zipf_sample  # noqa: E402
from .baseline import run_2pl_nowait  # noqa: E402

__all__ = [
    "Batch",
    "COMMITTED",
    "ConfigError",
    "Decision",
    "DependencyGraph",
    "DependencyKind",
    "EngineError",
    "ExecMode",
    "FragmentPriority",
    "InvalidSpec",
    "IsolationLevel",
    "Key",
    "KeyNotFound",
    "MismatchedWorkload",
    "QueueEngine",
    "Stall",
    "Step",
    "StepKind",
    "TpccConfig",
    "TxnSpec",
    "UncoveredKey",
    "VersionedStore",
    "YcsbConfig",
    "form_batch",
    "fragment_transaction",
    "gen_tpcc",
    "gen_ycsb",
    "parse_spec",
    "parse_specs",
    "plan",
    "replay_committed",
    "run_2pl_nowait",
    "serial_execute",
    "state_hash",
    "zipf_sample",
]
