"""Deterministic YCSB-style and simplified TPC-C transaction generators."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .storage import Key
from .txn import Compute, Step, StepKind, TxnSpec

YCSB_TABLE = 0
POISON = 0


def zipf_pmf(n: int, theta: float) -> np.ndarray:
    """Exact probabilities P(i) proportional to 1 / (i + 1) ** theta."""
    weights = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta
    return weights / weights.sum()


@lru_cache(maxsize=64)
def _zipf_cdf(n: int, theta: float) -> np.ndarray:
    cdf = np.cumsum(1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    cdf.setflags(write=False)
    return cdf


class ZipfSampler:
    """Inverse-CDF sampler over ``[0, n)`` with a precomputed normalizer."""

    def __init__(self, n: int, theta: float):
        if n < 1:
            raise ValueError("n must be >= 1")
        if theta < 0:
            raise ValueError("theta must be >= 0")
        self.n = n
        self.theta = float(theta)
        self.cdf = _zipf_cdf(n, float(theta))

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        idx = np.searchsorted(self.cdf, u, side="right")
        return np.minimum(idx, self.n - 1)


def zipf_sample(n: int, theta: float, rng: np.random.Generator) -> int:
    return int(ZipfSampler(n, theta).sample(rng))


@dataclass
class YcsbConfig:
    record_count: int = 1000
    ops_per_txn: int = 10
    write_fraction: float = 0.5
    zipf_theta: float = 0.0
    abortable_fraction: float = 0.0
    seed: int = 1
    # share of writes that copy an earlier read of the same txn instead of
    # incrementing; these create cross-record data dependencies
    copy_fraction: float = 0.0
    poison_fraction: float = 0.05

    def validate(self):
        problems = []
        if self.ops_per_txn < 1:
            problems.append("ops_per_txn: must be >= 1")
        if self.record_count < self.ops_per_txn:
            problems.append("record_count: must be >= ops_per_txn")
        for name in ("write_fraction", "abortable_fraction", "copy_fraction", "poison_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                problems.append(f"{name}: must be in [0, 1]")
        if self.zipf_theta < 0:
            problems.append("zipf_theta: must be >= 0")
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class TpccConfig:
    warehouse_count: int = 1
    payment_fraction: float = 0.5
    seed: int = 1
    abortable_payment_fraction: float = 0.01
    districts: int = 10
    customers_per_district: int = 3000
    items: int = 100_000

    def validate(self):
        problems = []
        if self.warehouse_count < 1:
            problems.append("warehouse_count: must be >= 1")
        for name in ("payment_fraction", "abortable_payment_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name}: must be in [0, 1]")
        if self.districts < 1 or self.customers_per_district < 1 or self.items < 15:
            problems.append("districts/customers_per_district/items: too small")
        if problems:
            raise ConfigError(problems)
        return self


def config_from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError([f"{cls.__name__}.{k}: unknown field" for k in unknown])
    try:
        return cls(**data).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


config_to_dict = asdict


# -- YCSB ------------------------------------------------------------------


def _ycsb_values(cfg: YcsbConfig):
    rng = np.random.default_rng([cfg.seed, 7])
    values = rng.integers(1, 101, size=cfg.record_count)
    poisoned = rng.random(cfg.record_count) < cfg.poison_fraction
    values[poisoned] = POISON
    return values, poisoned


def ycsb_initial_state(cfg: YcsbConfig) -> dict:
    """Record values in [1, 100]; a ``poison_fraction`` share start at POISON."""
    values, _ = _ycsb_values(cfg)
    return {Key(YCSB_TABLE, r): int(v) for r, v in enumerate(values.tolist())}


def poisoned_records(cfg: YcsbConfig) -> frozenset:
    return frozenset(np.flatnonzero(_ycsb_values(cfg)[1]).tolist())


def gen_ycsb(cfg: YcsbConfig, count: int, first_txn_id: int = 1) -> list[TxnSpec]:
    """``count`` multi-key transactions over a Zipf-skewed key space.

    Each op reads or (with ``write_fraction``) updates a distinct record. An
    abortable txn turns one op into a check that fails on POISON. Updates to
    poisoned records add zero, so they stay poisoned and the abort rate stays
    stationary.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    poisoned = poisoned_records(cfg)
    sampler = ZipfSampler(cfg.record_count, cfg.zipf_theta)
    k = cfg.ops_per_txn
    out = []
    pool = []
    for t in range(count):
        keys = []
        seen = set()
        while len(keys) < k:
            if not pool:
                pool = sampler.sample(rng, 4096).tolist()
                pool.reverse()
            r = pool.pop()
            if r not in seen:
                seen.add(r)
                keys.append(r)
        draws = rng.random(k * 2 + 1)
        deltas = rng.integers(1, 10, size=k)
        check_at = int(draws[-1] * k) if rng.random() < cfg.abortable_fraction else -1
        steps = []
        readable = []
        for j, r in enumerate(keys):
            key = Key(YCSB_TABLE, r)
            if j == check_at:
                steps.append(Step(key, StepKind.READ_ABORTCHECK, Compute.NEQ, POISON))
                readable.append(j)
            elif draws[j] < cfg.write_fraction:
                if r in poisoned:
                    steps.append(Step(key, StepKind.RMW, Compute.ADD, 0))
                    readable.append(j)
                elif readable and draws[k + j] < cfg.copy_fraction:
                    src = readable[int(draws[k + j] / cfg.copy_fraction * len(readable)) % len(readable)]
                    steps.append(Step(key, StepKind.WRITE, Compute.COPY, 0, (src,)))
                else:
                    steps.append(Step(key, StepKind.RMW, Compute.ADD, int(deltas[j])))
                    readable.append(j)
            else:
                steps.append(Step(key, StepKind.READ))
                readable.append(j)
        out.append(TxnSpec.from_steps(first_txn_id + t, steps))
    return out


# -- simplified TPC-C --------------------------------------------------------

W_TAX, W_YTD, D_NEXT_O_ID, D_YTD, C_BALANCE, STOCK, ORDER = range(1, 8)
TPCC_TABLES = {
    W_TAX: "warehouse_tax",
    W_YTD: "warehouse_ytd",
    D_NEXT_O_ID: "district_next_o_id",
    D_YTD: "district_ytd",
    C_BALANCE: "customer_balance",
    STOCK: "stock_quantity",
    ORDER: "order",
}


def _district(cfg, w, d):
    return w * cfg.districts + d


def _customer(cfg, w, d, c):
    return _district(cfg, w, d) * cfg.customers_per_district + c


def _stock(cfg, w, i):
    return w * cfg.items + i


def tpcc_initial_state(cfg: TpccConfig) -> dict:
    """Populated rows for every table except orders (amounts in cents)."""
    rng = np.random.default_rng([cfg.seed, 11])
    state = {}
    for w in range(cfg.warehouse_count):
        state[Key(W_TAX, w)] = int(rng.integers(0, 2001))
        state[Key(W_YTD, w)] = 30_000_000
        for d in range(cfg.districts):
            state[Key(D_NEXT_O_ID, _district(cfg, w, d))] = 3001
            state[Key(D_YTD, _district(cfg, w, d))] = 3_000_000
            for c in range(cfg.customers_per_district):
                state[Key(C_BALANCE, _customer(cfg, w, d, c))] = -1000
        quantities = rng.integers(10, 101, size=cfg.items)
        for i, q in enumerate(quantities.tolist()):
            state[Key(STOCK, _stock(cfg, w, i))] = q
    return state


def _nurand(rng, a, x, y, c):
    return (((int(rng.integers(0, a + 1)) | int(rng.integers(x, y + 1))) + c) % (y - x + 1)) + x


def gen_tpcc(cfg: TpccConfig, count: int, first_txn_id: int = 1) -> list[TxnSpec]:
    """NewOrder and Payment with fully declared read/write sets.

    NewOrder reads the warehouse tax, bumps the district's next order id (the
    hotspot), decrements 5-15 stock rows and writes an order row keyed by the
    txn id holding the order id it drew. Payment adds to warehouse and
    district YTD and charges a customer; an ``abortable_payment_fraction``
    share first checks the customer balance is positive, which fails for the
    initially negative balances, so those payments roll back.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    c_run = int(rng.integers(0, 1024))
    i_run = int(rng.integers(0, 8192))
    out = []
    for t in range(count):
        txn_id = first_txn_id + t
        w = int(rng.integers(0, cfg.warehouse_count))
        d = int(rng.integers(0, cfg.districts))
        if rng.random() < cfg.payment_fraction:
            amount = int(rng.integers(100, 500_001))
            c = _nurand(rng, 1023, 1, cfg.customers_per_district, c_run) - 1
            steps = [
                Step(Key(W_YTD, w), StepKind.RMW, Compute.ADD, amount),
                Step(Key(D_YTD, _district(cfg, w, d)), StepKind.RMW, Compute.ADD, amount),
            ]
            cust = Key(C_BALANCE, _customer(cfg, w, d, c))
            if rng.random() < cfg.abortable_payment_fraction:
                steps.append(Step(cust, StepKind.READ_ABORTCHECK, Compute.POS))
            steps.append(Step(cust, StepKind.RMW, Compute.ADD, -amount))
        else:
            ol_cnt = int(rng.integers(5, 16))
            items = []
            while len(items) < ol_cnt:
                i = _nurand(rng, 8191, 1, cfg.items, i_run) - 1
                if i not in items:
                    items.append(i)
            steps = [
                Step(Key(W_TAX, w), StepKind.READ),
                Step(Key(D_NEXT_O_ID, _district(cfg, w, d)), StepKind.RMW, Compute.ADD, 1),
            ]
            for i in items:
                qty = int(rng.integers(1, 11))
                steps.append(Step(Key(STOCK, _stock(cfg, w, i)), StepKind.RMW, Compute.ADD, -qty))
            steps.append(Step(Key(ORDER, txn_id), StepKind.WRITE, Compute.COPY, 0, (1,)))
        out.append(TxnSpec.from_steps(txn_id, steps))
    return out


def is_payment(spec: TxnSpec) -> bool:
    return spec.steps[0].key[0] == W_YTD
