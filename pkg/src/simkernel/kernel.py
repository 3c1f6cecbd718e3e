import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

from src.core.exceptions import InvariantViolation, PastEvent
from src.schemas.trace import EventKind, encode_line


@dataclass
class Event:
    fire_at: int
    kind: EventKind
    payload: Dict[str, Any] = field(default_factory=dict)
    seq: int = -1
    cancelled: bool = False


class Kernel:
    """Single-threaded event queue. Pops in (fire_at, seq) order; seq is a global schedule counter so there are no ties."""

    def __init__(self):
        self.now = 0
        self.processed = 0
        self._queue: List[Tuple[int, int, Event]] = []
        self._seq = itertools.count()

    def schedule(self, event: Event) -> Event:
        if event.fire_at < self.now:
            raise PastEvent(event.fire_at, self.now)
        event.seq = next(self._seq)
        heapq.heappush(self._queue, (event.fire_at, event.seq, event))
        return event

    def at(self, fire_at: int, kind: EventKind, **payload) -> Event:
        return self.schedule(Event(fire_at=fire_at, kind=kind, payload=payload))

    def after(self, delay: int, kind: EventKind, **payload) -> Event:
        return self.at(self.now + delay, kind, **payload)

    @staticmethod
    def cancel(event: Optional[Event]) -> None:
        if event is not None:
            event.cancelled = True

    def __len__(self) -> int:
        return sum(1 for _, _, e in self._queue if not e.cancelled)

    def drain(self, until: int) -> Iterator[Event]:
        """Yields live events with fire_at <= until, advancing the clock to each one."""
        while self._queue and self._queue[0][0] <= until:
            _, _, event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self.now = event.fire_at
            self.processed += 1
            yield event
        self.now = max(self.now, until)


class EventTrace:
    """Append-only run record. Every report number derives from these records."""

    def __init__(self):
        self.records: List[Dict[str, Any]] = []

    def append(self, t: int, kind: str, **payload) -> Dict[str, Any]:
        if self.records and t < self.records[-1]["t"]:
            raise InvariantViolation(
                f"trace time went backwards: {kind} at {t} after {self.records[-1]['t']}", self.records
            )
        record = {"seq": len(self.records), "t": t, "kind": kind, "payload": payload}
        self.records.append(record)
        return record

    def of_kind(self, kind: str) -> List[Dict[str, Any]]:
        return [r for r in self.records if r["kind"] == kind]

    def lines(self) -> List[str]:
        return [encode_line(r) for r in self.records]

    def to_bytes(self) -> bytes:
        return ("\n".join(self.lines()) + "\n").encode("utf-8") if self.records else b""
