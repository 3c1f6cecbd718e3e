from typing import List, Optional


class WaanError(Exception):
    """Base class for every error raised by the simulator."""


class TemplateEmpty(WaanError):
    pass


class PastEvent(WaanError):
    def __init__(self, fire_at: int, now: int):
        super().__init__(f"event at {fire_at} ms is before current time {now} ms")
        self.fire_at = fire_at
        self.now = now


class BeforePathStart(WaanError):
    pass


class UnknownNode(WaanError):
    def __init__(self, node_id: str):
        super().__init__(f"unknown node '{node_id}'")
        self.node_id = node_id


class BadBounds(WaanError):
    pass


class NotConnected(WaanError):
    pass


class NoCandidate(WaanError):
    pass


class StaleContext(WaanError):
    pass


class ParseError(WaanError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class ScenarioValidationError(WaanError):
    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class SchemaMismatch(WaanError):
    pass


class InvariantViolation(WaanError):
    def __init__(self, message: str, trace_prefix: Optional[list] = None):
        super().__init__(message)
        self.trace_prefix = trace_prefix or []
