"""Exception hierarchy shared by the engine, the baseline and the bench driver."""


class EngineError(Exception):
    """Base class for all errors raised by queuetx."""


class KeyNotFound(EngineError, KeyError):
    def __init__(self, key):
        super().__init__(key)
        self.key = key

    def __str__(self):
        return f"key {self.key} was never loaded"


class PriorityOrderViolation(EngineError):
    """A speculative write arrived out of per-record priority order."""


class AlreadyAborted(EngineError):
    pass


class IncompleteDecisions(EngineError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"no commit decision for txns {self.missing[:10]}")


class BatchNotActive(EngineError):
    pass


class UncoveredKey(EngineError):
    def __init__(self, key, txn_id=None):
        self.key = key
        self.txn_id = txn_id
        super().__init__(f"txn {txn_id}: step key {key} is outside its read/write set")


class InvalidSpec(EngineError):
    """A transaction spec failed validation for a reason other than coverage."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class SpecParseError(EngineError, ValueError):
    pass


class EmptyInput(EngineError):
    pass


class MissingPlanner(EngineError):
    pass


class DuplicateEdge(EngineError):
    pass


class DoublePublish(EngineError):
    pass


class DoubleResolve(EngineError):
    pass


class Stall(EngineError):
    """No executor can make progress although fragments remain."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(EngineError, ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class MismatchedWorkload(EngineError, ValueError):
    pass
