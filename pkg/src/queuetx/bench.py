"""Benchmark driver: build a workload, run it on the queue engine or the
2PL-NoWait baseline, and report throughput, latency and abort counts.

Command line::

    bench run --config ycsb.toml -E 4 --format human
    bench gen --config ycsb.toml --format spec-text --count 10
"""
from __future__ import annotations

import argparse
import dataclasses
import io
import json
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import run_2pl_nowait
from .errors import ConfigError, MismatchedWorkload, Stall
from .executor import EVENT_LOG_HEADER, Decision, QueueEngine
from .planner import DEFAULT_BATCH_SIZE, form_batch, plan_to_json
from .storage import VersionedStore
from .txn import ExecMode, IsolationLevel, format_spec
from .workloads import (
    TpccConfig,
    YcsbConfig,
    config_from_dict,
    gen_tpcc,
    gen_ycsb,
    tpcc_initial_state,
    ycsb_initial_state,
)

ENGINES = ("queue", "2pl")
WORKLOADS = {"ycsb": YcsbConfig, "tpcc": TpccConfig}


@dataclass
class BenchConfig:
    engine: str = "queue"
    mode: str = "spec"
    isolation: str = "ser"
    planners: int = 1
    executors: int = 1
    batch_size: int = DEFAULT_BATCH_SIZE
    workload: YcsbConfig | TpccConfig = field(default_factory=YcsbConfig)
    txn_count: int = 10_000
    warmup_count: int | None = None  # None: first 10% of txn_count
    seed: int | None = None  # overrides the workload seed when set
    retry_budget: int = 1000

    def __post_init__(self):
        if self.warmup_count is None:
            self.warmup_count = self.txn_count // 10
        if self.seed is not None:
            self.workload.seed = self.seed
        else:
            self.seed = self.workload.seed

    @property
    def workload_kind(self) -> str:
        return "tpcc" if isinstance(self.workload, TpccConfig) else "ycsb"

    def validate(self) -> "BenchConfig":
        problems = []
        if self.engine not in ENGINES:
            problems.append(f"engine: expected one of {ENGINES}, got {self.engine!r}")
        try:
            ExecMode(self.mode)
        except ValueError:
            problems.append(f"mode: expected spec|cons, got {self.mode!r}")
        try:
            IsolationLevel(self.isolation)
        except ValueError:
            problems.append(f"isolation: expected ser|rc, got {self.isolation!r}")
        for name in ("planners", "executors", "batch_size"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                problems.append(f"{name}: must be an integer >= 1")
        if self.warmup_count < 0:
            problems.append("warmup_count: must be >= 0")
        if self.txn_count <= self.warmup_count:
            problems.append("txn_count: must exceed warmup_count")
        if self.retry_budget < 0:
            problems.append("retry_budget: must be >= 0")
        try:
            self.workload.validate()
        except ConfigError as exc:
            problems.extend(f"workload.{p}" for p in exc.problems)
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["workload"] = {"kind": self.workload_kind, **dataclasses.asdict(self.workload)}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "BenchConfig":
        data = dict(data)
        wl = dict(data.pop("workload", {}) or {})
        kind = wl.pop("kind", "ycsb")
        if kind not in WORKLOADS:
            raise ConfigError([f"workload.kind: expected ycsb|tpcc, got {kind!r}"])
        known = {f.name for f in dataclasses.fields(cls)} - {"workload"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"{k}: unknown field" for k in unknown])
        try:
            workload = config_from_dict(WORKLOADS[kind], wl)
        except ConfigError as exc:
            raise ConfigError([f"workload.{p}" for p in exc.problems]) from None
        try:
            return cls(workload=workload, **data).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path) -> dict:
    """Read a TOML or JSON benchmark config into a plain dict."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    if path.suffix == ".json":
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {exc}") from None
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(raw.decode())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: {exc}") from None


@dataclass
class Report:
    engine: str
    txn_count: int
    measured_txns: int
    commits: int
    throughput: float
    latency_p50_us: float
    latency_p95_us: float
    latency_p99_us: float
    aborts: dict
    commit_rate: float
    state_hash: str
    config: dict
    build_id: str
    wall_time_s: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(**d)


def percentiles(samples, qs=(50, 95, 99)) -> list[float]:
    """Nearest-rank percentiles; zeros for an empty sample."""
    if len(samples) == 0:
        return [0.0 for _ in qs]
    return [float(v) for v in np.percentile(np.asarray(samples, dtype=float), qs, method="inverted_cdf")]


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def make_workload(config: BenchConfig):
    """Return ``(initial_state, txns)`` for the configured workload."""
    wl = config.workload
    if isinstance(wl, TpccConfig):
        return tpcc_initial_state(wl), gen_tpcc(wl, config.txn_count)
    return ycsb_initial_state(wl), gen_ycsb(wl, config.txn_count)


@dataclass
class _Phase:
    commits: int = 0
    logic: int = 0
    cascade: int = 0
    conflict: int = 0
    retries: int = 0
    unresolved: int = 0
    elapsed_s: float = 0.0
    latencies: list = field(default_factory=list)


def drive_queue(engine: QueueEngine, txns, batch_size: int, on_batch=None) -> _Phase:
    """Batch loop: form, plan, execute, commit. Cascade-aborted txns go back
    to the front of the pending list and rejoin the next batch."""
    out = _Phase()
    pending = list(txns)
    submitted = {}
    t0 = time.perf_counter()
    while pending:
        batch = form_batch(pending, batch_size, engine.planners, engine.batch_id)
        for t in batch.txns:
            submitted.setdefault(t.txn_id, time.monotonic_ns())
        result = engine.run_batch(batch)
        done = result.finished_ns
        retry = []
        for t in batch.txns:
            d = result.decisions[t.txn_id]
            if d is Decision.CASCADE:
                out.cascade += 1
                retry.append(t)
                continue
            if d is Decision.COMMITTED:
                out.commits += 1
                out.latencies.append((done - submitted.pop(t.txn_id)) / 1000.0)
            else:
                out.logic += 1
                submitted.pop(t.txn_id)
        pending[:0] = retry
        out.retries += len(retry)
        if on_batch is not None:
            on_batch(batch, result)
    out.elapsed_s = time.perf_counter() - t0
    return out


def drive_2pl(store, txns, config: BenchConfig) -> _Phase:
    r = run_2pl_nowait(store, txns, config.executors, config.retry_budget, config.seed)
    return _Phase(
        commits=r.commits,
        logic=r.logic_aborts,
        conflict=r.conflict_aborts,
        retries=r.retries,
        unresolved=r.unresolved,
        elapsed_s=r.elapsed_s,
        latencies=r.latencies_us,
    )


def run(config: BenchConfig, *, event_log=None, dump_plan=None, dump_deps=None) -> Report:
    """Generate the workload, run warmup then the measured phase, report.

    ``event_log``, ``dump_plan`` and ``dump_deps`` are optional text streams
    (queue engine only) receiving the fragment event log CSV, the last
    batch's plan and the last batch's dependency graph.
    """
    config.validate()
    wall0 = time.perf_counter()
    initial, txns = make_workload(config)
    store = VersionedStore()
    store.bulk_load(initial.items())
    warm, measured = txns[: config.warmup_count], txns[config.warmup_count :]

    if config.engine == "2pl":
        if warm:
            drive_2pl(store, warm, config)
        phase = drive_2pl(store, measured, config)
    else:
        engine = QueueEngine(
            store,
            config.planners,
            config.executors,
            config.mode,
            config.isolation,
            event_log=event_log is not None,
            keep_deps=dump_deps is not None,
        )
        if event_log is not None:
            event_log.write(EVENT_LOG_HEADER + "\n")

        def on_batch(batch, result):
            if event_log is not None:
                for ev in result.events:
                    event_log.write(ev.csv() + "\n")

        with engine:
            if warm:
                drive_queue(engine, warm, config.batch_size, on_batch)
            phase = drive_queue(engine, measured, config.batch_size, on_batch)
            if dump_plan is not None and engine.last_plan is not None:
                dump_plan.write(plan_to_json(engine.last_plan) + "\n")
            if dump_deps is not None and engine.last_deps_json is not None:
                dump_deps.write(engine.last_deps_json + "\n")

    p50, p95, p99 = percentiles(phase.latencies)
    n = len(measured)
    return Report(
        engine=config.engine,
        txn_count=config.txn_count,
        measured_txns=n,
        commits=phase.commits,
        throughput=phase.commits / phase.elapsed_s if phase.elapsed_s > 0 else 0.0,
        latency_p50_us=p50,
        latency_p95_us=p95,
        latency_p99_us=p99,
        aborts={
            "logic": phase.logic,
            "cascade": phase.cascade,
            "conflict": phase.conflict,
            "retries": phase.retries,
            "unresolved": phase.unresolved,
        },
        commit_rate=phase.commits / n if n else 0.0,
        state_hash=store_hash(store),
        config=config.to_dict(),
        build_id=build_id(),
        wall_time_s=time.perf_counter() - wall0,
    )


def store_hash(store: VersionedStore) -> str:
    from .storage import state_hash

    return state_hash(store.snapshot())


# -- output ------------------------------------------------------------------

_SCALARS = (
    "engine",
    "txn_count",
    "measured_txns",
    "commits",
    "throughput",
    "latency_p50_us",
    "latency_p95_us",
    "latency_p99_us",
    "commit_rate",
    "state_hash",
    "build_id",
    "wall_time_s",
)
_ABORT_FIELDS = ("logic", "cascade", "conflict", "retries", "unresolved")


def emit(report: Report, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=1) + "\n").encode()
    if fmt == "csv":
        header = list(_SCALARS) + [f"aborts_{k}" for k in _ABORT_FIELDS] + ["config"]
        row = [getattr(report, k) for k in _SCALARS] + [report.aborts.get(k, 0) for k in _ABORT_FIELDS]
        row.append(json.dumps(report.config, sort_keys=True))
        buf = io.StringIO()
        import csv

        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerow(row)
        return buf.getvalue().encode()
    if fmt == "human":
        cfg = report.config
        wl = cfg["workload"]
        rows = [
            ("engine", f"{report.engine} mode={cfg['mode']} iso={cfg['isolation']} P={cfg['planners']} E={cfg['executors']}"),
            ("workload", f"{wl['kind']} seed={wl['seed']} txns={report.txn_count} (measured {report.measured_txns})"),
            ("throughput", f"{report.throughput:,.0f} txn/s"),
            ("commit rate", f"{report.commit_rate:.2%}"),
            ("latency us", f"p50 {report.latency_p50_us:,.1f}  p95 {report.latency_p95_us:,.1f}  p99 {report.latency_p99_us:,.1f}"),
            ("aborts", "  ".join(f"{k} {report.aborts.get(k, 0)}" for k in _ABORT_FIELDS)),
            ("state hash", report.state_hash[:16]),
            ("wall time", f"{report.wall_time_s:.2f} s"),
            ("build", report.build_id),
        ]
        width = max(len(k) for k, _ in rows)
        return "".join(f"{k:<{width}}  {v}\n" for k, v in rows).encode()
    raise ValueError(f"unknown format {fmt!r}")


@dataclass
class Comparison:
    speedup: float
    commit_rate_delta: float
    abort_delta: dict


def _workload_identity(report: Report) -> tuple:
    cfg = report.config
    return json.dumps(cfg["workload"], sort_keys=True), cfg["txn_count"], cfg["warmup_count"]


def compare(a: Report, b: Report) -> Comparison:
    """Speedup of ``a`` over ``b``; both must have run the same workload."""
    if _workload_identity(a) != _workload_identity(b):
        raise MismatchedWorkload("reports were produced from different workloads")
    speedup = a.throughput / b.throughput if b.throughput > 0 else float("inf")
    return Comparison(
        speedup=speedup,
        commit_rate_delta=a.commit_rate - b.commit_rate,
        abort_delta={k: a.aborts.get(k, 0) - b.aborts.get(k, 0) for k in _ABORT_FIELDS},
    )


# -- command line ------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Queue engine and 2PL-NoWait benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one benchmark and print a report")
    r.add_argument("--config", help="TOML or JSON config file")
    r.add_argument("--engine", choices=ENGINES)
    r.add_argument("--mode", choices=[m.value for m in ExecMode])
    r.add_argument("--isolation", choices=[i.value for i in IsolationLevel])
    r.add_argument("-P", dest="planners", type=int)
    r.add_argument("-E", dest="executors", type=int)
    r.add_argument("--batch-size", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--format", choices=("json", "csv", "human"), default="json")
    r.add_argument("--out", help="write the report here instead of stdout")
    r.add_argument("--event-log", help="write the fragment event log CSV here")
    r.add_argument("--dump-plan", nargs="?", const="-", help="write the last batch plan as JSON (default stderr)")
    r.add_argument("--dump-deps", nargs="?", const="-", help="write the last dependency graph as JSON (default stderr)")

    g = sub.add_parser("gen", help="print the generated workload")
    g.add_argument("--config", help="TOML or JSON config file")
    g.add_argument("--format", choices=("spec-text",), default="spec-text")
    g.add_argument("--count", type=int, help="number of txns (default: txn_count)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    return p


def config_from_args(args) -> BenchConfig:
    data = load_config(args.config) if args.config else {}
    for name in ("engine", "mode", "isolation", "planners", "executors", "batch_size", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return BenchConfig.from_dict(data)


def _open_text(path):
    if path in (None, "-"):
        return None
    return open(path, "w", encoding="utf-8", newline="")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == "gen":
            count = args.count if args.count is not None else config.txn_count
            gen = gen_tpcc if isinstance(config.workload, TpccConfig) else gen_ycsb
            text = "".join(format_spec(t) + "\n" for t in gen(config.workload, count))
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0

        log = _open_text(args.event_log)
        plan_out = sys.stderr if args.dump_plan == "-" else _open_text(args.dump_plan)
        deps_out = sys.stderr if args.dump_deps == "-" else _open_text(args.dump_deps)
        try:
            report = run(config, event_log=log, dump_plan=plan_out, dump_deps=deps_out)
        finally:
            for f in (log, plan_out, deps_out):
                if f is not None and f is not sys.stderr:
                    f.close()
        payload = emit(report, args.format)
        if args.out:
            Path(args.out).write_bytes(payload)
        else:
            sys.stdout.buffer.write(payload)
            sys.stdout.flush()
        return 0
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except Stall as exc:
        print(f"stall: {exc}", file=sys.stderr)
        for k, v in exc.diagnostics.items():
            print(f"  {k}: {v}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
