"""Transaction specs, the compute catalog, and fragmentation into
single-record fragments.

A transaction is an ordered list of steps. Each step touches one key and
optionally consumes *slots*: the value a previous step read (slot ``i`` is the
value observed by step ``i``). Steps on the same key are grouped into one
fragment; slots that cross fragments become data inputs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .errors import InvalidSpec, SpecParseError, UncoveredKey
from .storage import Key, wrap64


class StepKind(str, enum.Enum):
    READ = "READ"
    WRITE = "WRITE"
    RMW = "RMW"
    READ_ABORTCHECK = "CHECK"


class Compute(str, enum.Enum):
    NONE = "NONE"
    CONST = "CONST"
    ADD = "ADD"
    MUL = "MUL"
    COPY = "COPY"
    POS = "POS"
    NONNEG = "NONNEG"
    NEQ = "NEQ"


CHECK_TAGS = frozenset({Compute.POS, Compute.NONNEG, Compute.NEQ})

# which compute tags each step kind accepts
ALLOWED_COMPUTE = {
    StepKind.READ: frozenset({Compute.NONE}),
    StepKind.WRITE: frozenset({Compute.CONST, Compute.COPY}),
    StepKind.RMW: frozenset({Compute.CONST, Compute.ADD, Compute.MUL, Compute.COPY}),
    StepKind.READ_ABORTCHECK: CHECK_TAGS,
}

_TAKES_ARG = frozenset({Compute.CONST, Compute.ADD, Compute.MUL, Compute.NEQ})


class Step(NamedTuple):
    key: Key
    kind: StepKind
    compute: Compute = Compute.NONE
    arg: int = 0
    inputs: tuple = ()

    @property
    def reads_store(self) -> bool:
        return self.kind is not StepKind.WRITE

    @property
    def writes(self) -> bool:
        return self.kind is StepKind.WRITE or self.kind is StepKind.RMW

    @property
    def produces_slot(self) -> bool:
        return self.kind is not StepKind.WRITE


def read(key) -> Step:
    return Step(Key(*key), StepKind.READ)


def write(key, value=None, *, copy=None) -> Step:
    if copy is not None:
        return Step(Key(*key), StepKind.WRITE, Compute.COPY, 0, (copy,))
    return Step(Key(*key), StepKind.WRITE, Compute.CONST, value)


def rmw(key, compute="ADD", arg=0, *, copy=None) -> Step:
    if copy is not None:
        return Step(Key(*key), StepKind.RMW, Compute.COPY, 0, (copy,))
    return Step(Key(*key), StepKind.RMW, Compute(compute), arg)


def check(key, compute="POS", arg=0) -> Step:
    return Step(Key(*key), StepKind.READ_ABORTCHECK, Compute(compute), arg)


def evaluate(step: Step, current, slots):
    """Apply one step to the record's current value.

    Returns ``(slot_value, new_value, ok)``. ``slot_value`` is what later steps
    see through this step's slot (None for blind writes); ``ok`` is False only
    when an abort check fails.
    """
    kind = step.kind
    tag = step.compute
    if kind is StepKind.READ:
        return current, current, True
    if kind is StepKind.READ_ABORTCHECK:
        if tag is Compute.POS:
            ok = current > 0
        elif tag is Compute.NONNEG:
            ok = current >= 0
        else:
            ok = current != step.arg
        return current, current, ok
    if tag is Compute.CONST:
        new = step.arg
    elif tag is Compute.COPY:
        new = slots[step.inputs[0]]
    elif tag is Compute.ADD:
        new = wrap64(current + step.arg)
    else:
        new = wrap64(current * step.arg)
    if kind is StepKind.WRITE:
        return None, new, True
    return current, new, True


@dataclass(frozen=True)
class TxnSpec:
    txn_id: int
    steps: tuple
    read_set: frozenset
    write_set: frozenset

    @classmethod
    def from_steps(cls, txn_id: int, steps: Iterable[Step]) -> "TxnSpec":
        steps = tuple(steps)
        reads = frozenset(s.key for s in steps if s.reads_store)
        writes = frozenset(s.key for s in steps if s.writes)
        return cls(txn_id, steps, reads, writes)

    @property
    def keys(self) -> frozenset:
        return self.read_set | self.write_set

    @property
    def abortable(self) -> bool:
        return any(s.kind is StepKind.READ_ABORTCHECK for s in self.steps)

    def __str__(self):
        return format_spec(self)


class DependencyKind(str, enum.Enum):
    DATA = "DATA"
    CONFLICT = "CONFLICT"
    COMMIT = "COMMIT"
    SPECULATION = "SPECULATION"


SAME_TXN_KINDS = frozenset({DependencyKind.DATA, DependencyKind.COMMIT})


class ExecMode(str, enum.Enum):
    SPECULATIVE = "spec"
    CONSERVATIVE = "cons"


class IsolationLevel(str, enum.Enum):
    SERIALIZABLE = "ser"
    READ_COMMITTED = "rc"


@dataclass(eq=False, slots=True)
class Fragment:
    """All of one transaction's steps on one record.

    ``ops`` holds ``(slot, step)`` pairs in step order. ``data_inputs`` lists
    ``(producer_frag_id, slot)`` for every slot read from another fragment of
    the same txn; ``exports`` lists this fragment's slots other fragments need.
    """

    txn_id: int
    seq: int
    key: Key
    ops: tuple
    abortable: bool
    data_inputs: tuple = ()
    exports: tuple = ()
    priority: tuple = None
    # set while linking an executor's queues
    rc_read: bool = False
    read_from: object = None
    gate: object = None
    executor_id: int = -1
    writes: bool = field(init=False)
    # a leading blind write means later steps only see the txn's own value
    needs_read: bool = field(init=False)

    def __post_init__(self):
        self.writes = any(step.writes for _, step in self.ops)
        self.needs_read = self.ops[0][1].kind is not StepKind.WRITE

    @property
    def frag_id(self):
        return (self.txn_id, self.seq)

    @property
    def read_only(self) -> bool:
        return not self.writes

    def clone(self) -> "Fragment":
        """Fresh copy of the static part, with per-batch fields reset."""
        return Fragment(self.txn_id, self.seq, self.key, self.ops, self.abortable, self.data_inputs, self.exports)

    def __repr__(self):
        return f"Fragment(T{self.txn_id}.{self.seq} {self.key} prio={self.priority})"


class Violation(NamedTuple):
    kind: str
    step: int
    detail: str

    def __str__(self):
        return f"{self.kind}(step {self.step}: {self.detail})"


def validate_spec(spec: TxnSpec) -> list[Violation]:
    """Diagnose a spec; an empty list means it is well formed."""
    problems = []
    covered = spec.read_set | spec.write_set
    for i, step in enumerate(spec.steps):
        if step.key not in covered:
            problems.append(Violation("UncoveredKey", i, str(step.key)))
        if not isinstance(step.compute, Compute) or step.compute not in ALLOWED_COMPUTE.get(step.kind, ()):
            problems.append(Violation("UnknownCompute", i, f"{step.kind}/{step.compute}"))
        n_inputs = 1 if step.compute is Compute.COPY else 0
        if len(step.inputs) != n_inputs:
            problems.append(Violation("BadInputs", i, f"expected {n_inputs} input slot(s)"))
        for slot in step.inputs:
            if not isinstance(slot, int) or slot < 0 or slot >= len(spec.steps):
                problems.append(Violation("InvalidSlot", i, f"slot {slot} out of range"))
            elif slot >= i:
                problems.append(Violation("ForwardReference", i, f"slot {slot}"))
            elif not spec.steps[slot].produces_slot:
                problems.append(Violation("InvalidSlot", i, f"slot {slot} is a blind write"))
    if not problems:
        try:
            _fragment(spec)
        except InvalidSpec as exc:
            problems.extend(exc.violations)
    return problems


def fragment_transaction(spec: TxnSpec) -> list[Fragment]:
    """Split a spec into one fragment per distinct key, in first-touch order.

    The split depends only on the spec, so it is computed once and kept on the
    spec; every call returns fresh fragment objects.
    """
    templates = spec.__dict__.get("_fragments")
    if templates is None:
        covered = spec.read_set | spec.write_set
        for step in spec.steps:
            if step.key not in covered:
                raise UncoveredKey(step.key, spec.txn_id)
        templates = _fragment(spec)
        object.__setattr__(spec, "_fragments", templates)
    return [f.clone() for f in templates]


def _fragment(spec: TxnSpec) -> list[Fragment]:
    txn_id = spec.txn_id
    order: dict = {}
    ops: list[list] = []
    slot_owner = []
    for i, step in enumerate(spec.steps):
        seq = order.get(step.key)
        if seq is None:
            seq = order[step.key] = len(ops)
            ops.append([])
        ops[seq].append((i, step))
        slot_owner.append(seq)

    inputs = [dict() for _ in ops]  # seq -> {slot: producer seq}
    exports = [set() for _ in ops]
    for i, step in enumerate(spec.steps):
        consumer = slot_owner[i]
        for slot in step.inputs:
            if not 0 <= slot < i:
                raise InvalidSpec([Violation("ForwardReference", i, f"slot {slot}")])
            producer = slot_owner[slot]
            if producer != consumer:
                inputs[consumer][slot] = producer
                exports[producer].add(slot)
    if any(inputs):
        _check_acyclic(inputs, spec.txn_id)

    frags = []
    for seq, frag_ops in enumerate(ops):
        key = frag_ops[0][1].key
        frags.append(
            Fragment(
                txn_id=txn_id,
                seq=seq,
                key=key,
                ops=tuple(frag_ops),
                abortable=any(s.kind is StepKind.READ_ABORTCHECK or s.compute in CHECK_TAGS for _, s in frag_ops),
                data_inputs=tuple(((txn_id, p), slot) for slot, p in sorted(inputs[seq].items())),
                exports=tuple(sorted(exports[seq])),
            )
        )
    return frags


def _check_acyclic(inputs, txn_id):
    # fragments group steps by key, so two keys can feed each other even though
    # step-level slots always point backwards
    state = [0] * len(inputs)

    def visit(n):
        state[n] = 1
        for p in set(inputs[n].values()):
            if state[p] == 1:
                raise InvalidSpec([Violation("FragmentCycle", -1, f"txn {txn_id} fragments {n}<->{p}")])
            if state[p] == 0:
                visit(p)
        state[n] = 2

    for n in range(len(inputs)):
        if state[n] == 0:
            visit(n)


def _is_before(a: Fragment, b: Fragment) -> bool:
    if a.priority is not None and b.priority is not None:
        return a.priority < b.priority
    return (a.txn_id, a.seq) < (b.txn_id, b.seq)


def dependency_kinds(a: Fragment, b: Fragment, mode=ExecMode.SPECULATIVE) -> frozenset:
    """Every dependency kind under which ``b`` depends on ``a``."""
    kinds = set()
    if a.txn_id == b.txn_id:
        if a.seq == b.seq:
            return frozenset()
        if any(producer == a.frag_id for producer, _ in b.data_inputs):
            kinds.add(DependencyKind.DATA)
        if a.abortable and b.writes and a.seq < b.seq:
            kinds.add(DependencyKind.COMMIT)
        return frozenset(kinds)
    if a.key != b.key:
        return frozenset()
    kinds.add(DependencyKind.CONFLICT)
    if (
        ExecMode(mode) is ExecMode.SPECULATIVE
        and a.abortable
        and a.writes
        and b.needs_read
        and _is_before(a, b)
    ):
        kinds.add(DependencyKind.SPECULATION)
    return frozenset(kinds)


_PRECEDENCE = (
    DependencyKind.DATA,
    DependencyKind.COMMIT,
    DependencyKind.SPECULATION,
    DependencyKind.CONFLICT,
)


def classify_dependency(a: Fragment, b: Fragment, mode=ExecMode.SPECULATIVE):
    """Strongest dependency of ``b`` on ``a``, or None."""
    kinds = dependency_kinds(a, b, mode)
    for kind in _PRECEDENCE:
        if kind in kinds:
            return kind
    return None


# -- text form -------------------------------------------------------------
#   TXN 7 | RMW k1 ADD 5 | WRITE k2 COPY 0 | CHECK k3 POS | READ 2:14


def parse_key(text: str) -> Key:
    text = text.strip()
    try:
        if text.startswith("k"):
            return Key(0, int(text[1:]))
        table, record = text.split(":")
        return Key(int(table), int(record))
    except ValueError:
        raise SpecParseError(f"bad key {text!r}") from None


def _parse_step(text: str) -> Step:
    parts = text.split()
    if len(parts) < 2:
        raise SpecParseError(f"bad step {text!r}")
    try:
        kind = StepKind(parts[0].upper())
    except ValueError:
        raise SpecParseError(f"unknown step kind {parts[0]!r}") from None
    key = parse_key(parts[1])
    if kind is StepKind.READ:
        if len(parts) != 2:
            raise SpecParseError(f"READ takes no compute: {text!r}")
        return Step(key, kind)
    if len(parts) < 3:
        raise SpecParseError(f"missing compute tag: {text!r}")
    try:
        tag = Compute(parts[2].upper())
    except ValueError:
        raise SpecParseError(f"unknown compute tag {parts[2]!r}") from None
    rest = parts[3:]
    try:
        if tag is Compute.COPY:
            (slot,) = rest
            return Step(key, kind, tag, 0, (int(slot),))
        if tag in _TAKES_ARG:
            (arg,) = rest
            return Step(key, kind, tag, int(arg))
        if rest:
            raise ValueError
        return Step(key, kind, tag)
    except ValueError:
        raise SpecParseError(f"bad arguments in {text!r}") from None


def parse_spec(line: str) -> TxnSpec:
    parts = [p.strip() for p in line.strip().split("|")]
    head = parts[0].split()
    if len(head) != 2 or head[0].upper() != "TXN":
        raise SpecParseError(f"expected 'TXN <id>' in {line!r}")
    try:
        txn_id = int(head[1])
    except ValueError:
        raise SpecParseError(f"bad txn id in {line!r}") from None
    return TxnSpec.from_steps(txn_id, (_parse_step(p) for p in parts[1:] if p))


def parse_specs(text: str) -> list[TxnSpec]:
    return [parse_spec(line) for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]


def format_step(step: Step) -> str:
    out = f"{step.kind.value} {step.key}"
    if step.kind is StepKind.READ:
        return out
    out += f" {step.compute.value}"
    if step.compute is Compute.COPY:
        return f"{out} {step.inputs[0]}"
    if step.compute in _TAKES_ARG:
        return f"{out} {step.arg}"
    return out


def format_spec(spec: TxnSpec) -> str:
    return " | ".join([f"TXN {spec.txn_id}"] + [format_step(s) for s in spec.steps])


def serial_fragment_replay(frags: Sequence[Fragment], state: dict, local=None):
    """Run one txn's fragments in a data-input-respecting order on ``state``.

    Test helper for checking that fragmentation preserves step semantics.
    Returns ``(ok, writes)``; ``state`` is not modified.
    """
    slots: dict = {}
    done = set()
    writes = {}
    pending = list(frags)
    while pending:
        progressed = False
        for frag in list(pending):
            if any(p not in done for p, _ in frag.data_inputs):
                continue
            current = writes.get(frag.key, state.get(frag.key))
            for slot, step in frag.ops:
                slot_value, current, ok = evaluate(step, current, slots)
                if not ok:
                    return False, {}
                if step.produces_slot:
                    slots[slot] = slot_value
            if frag.writes:
                writes[frag.key] = current
            done.add(frag.frag_id)
            pending.remove(frag)
            progressed = True
        if not progressed:
            raise InvalidSpec([Violation("FragmentCycle", -1, "no runnable fragment")])
    return True, writes

