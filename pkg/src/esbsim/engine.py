"""Deterministic discrete-event core.

The virtual clock counts integer tenths of microseconds ("ticks") so that
timestamp arithmetic and comparisons are exact at the 0.1 us resolution the
rest of the toolkit is built around.  Randomness comes from counter-based
Philox streams keyed by (seed, stream id), which makes every draw reproducible
and lets independent attempts run on parallel workers without coordinating.
"""

from __future__ import annotations

import hashlib
import heapq
import struct
from typing import Any, Callable

import numpy as np

TICKS_PER_US = 10

RNG_ALGORITHM = "philox4x64"

# Stream purposes (third component of a stream id).  Keeping these stable is
# part of the reproducibility contract: output files record only the seed.
PURPOSE_LOSS = 1
PURPOSE_CORRUPT = 2
PURPOSE_JITTER = 3
PURPOSE_ESCAPE = 4
PURPOSE_SHUFFLE = 5
PURPOSE_BLE_WAIT = 6


def us_to_ticks(value_us: float) -> int:
    """Snap a microsecond value to the 0.1 us clock grid."""
    return round(value_us * TICKS_PER_US)


def ticks_to_us(ticks: int) -> float:
    return ticks / TICKS_PER_US


class TimeTravelError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class Event:
    """One queued occurrence: popped in (time_ticks, seq) order."""

    __slots__ = ("time_ticks", "seq", "kind", "node_id", "data")

    def __init__(self, time_ticks: int, kind: str, node_id: int = 0, data: Any = None):
        self.time_ticks = time_ticks
        self.seq = -1  # assigned by the engine on schedule()
        self.kind = kind
        self.node_id = node_id
        self.data = data

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Event(t={self.time_ticks}, seq={self.seq}, kind={self.kind!r}, node={self.node_id})"


class Engine:
    """Single-threaded event queue with a monotonic integer-tick clock.

    Equal-timestamp events run in insertion order (stable FIFO tie-break).
    One engine instance drives one attempt or one node pair; parallelism
    happens across engines, never inside one.
    """

    def __init__(self, start_ticks: int = 0):
        self.now_ticks = start_ticks
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._handlers: dict[str, Callable[[Engine, Event], None]] = {}

    def on(self, kind: str, handler: Callable[[Engine, Event], None]) -> None:
        self._handlers[kind] = handler

    def schedule(self, event: Event) -> Event:
        if event.time_ticks < self.now_ticks:
            raise TimeTravelError(
                f"cannot schedule {event.kind!r} at t={event.time_ticks} ticks; clock is {self.now_ticks}"
            )
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (event.time_ticks, event.seq, event))
        return event

    def schedule_after(self, delay_ticks: int, kind: str, node_id: int = 0, data: Any = None) -> Event:
        return self.schedule(Event(self.now_ticks + delay_ticks, kind, node_id, data))

    def run_until_idle(self) -> int:
        """Process every queued event; returns the final clock in ticks."""
        while self._queue:
            time_ticks, _, event = heapq.heappop(self._queue)
            self.now_ticks = time_ticks
            handler = self._handlers.get(event.kind)
            if handler is not None:
                handler(self, event)
        return self.now_ticks


def _stream_key(seed: int, namespace: tuple[int, ...]) -> np.ndarray:
    """Derive a 128-bit Philox key from the run seed and a namespace tuple."""
    packed = struct.pack(f"<Q{len(namespace)}q", seed & 0xFFFFFFFFFFFFFFFF, *namespace)
    digest = hashlib.blake2b(packed, digest_size=16).digest()
    return np.frombuffer(digest, dtype=np.uint64)


class RngStream:
    """Reproducible random stream addressed by (seed, stream_id).

    The stream id is up to three non-negative integers, conventionally
    (round, attempt, purpose); it selects a disjoint 2^64-draw counter block
    of a Philox generator, so distinct ids are independent by construction.
    An optional namespace tuple (e.g. a config index) is folded into the key
    for runs that need more addressing dimensions.  `rekey` repoints an
    existing instance to another stream id cheaply, which hot loops use to
    avoid re-building generators; a rekeyed stream draws exactly the same
    sequence as a freshly constructed one.
    """

    def __init__(
        self,
        seed: int,
        stream_id: tuple[int, ...] = (0, 0, 0),
        namespace: tuple[int, ...] = (),
    ):
        self.seed = seed
        self.namespace = tuple(namespace)
        self._key = _stream_key(seed, self.namespace)
        self._philox = np.random.Philox(key=self._key)
        self._gen = np.random.Generator(self._philox)
        self.rekey(stream_id)

    def rekey(self, stream_id: tuple[int, ...]) -> "RngStream":
        if len(stream_id) > 3 or any(s < 0 for s in stream_id):
            raise ValueError(f"stream id must be up to 3 non-negative ints, got {stream_id!r}")
        counter = np.zeros(4, dtype=np.uint64)
        for i, part in enumerate(stream_id):
            counter[i + 1] = part
        self._philox.state = {
            "bit_generator": "Philox",
            "state": {"counter": counter, "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        self.stream_id = tuple(stream_id)
        return self

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size: int | None = None):
        """Uniform draw(s) over [lo, hi)."""
        if hi < lo:
            raise ValueError(f"uniform bounds reversed: [{lo}, {hi})")
        return self._gen.uniform(lo, hi, size)

    def bernoulli(self, p: float, size: int | None = None):
        """Boolean draw(s) that are True with probability p."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"bernoulli p out of range: {p}")
        if size is None:
            return bool(self._gen.random() < p)
        return self._gen.random(size) < p

    def normal(self, sigma: float, size: int | None = None):
        """Zero-mean normal draw(s) with standard deviation sigma."""
        return self._gen.normal(0.0, sigma, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
