"""TX/RX node state machines over the eight-probe pipeline.

A broadcast attempt walks the instrumented stages D0..D7: command issued on
the sender's application core (D0), handed over IPC to the radio core
(D1, D2), through the radio stack to the antenna (D3), over the air to the
first command in the receiver's radio library (D4), its event handler (D5),
and back up over IPC to the receiver's application core (D6, D7).  Copies are
sent unconditionally (no acknowledgements), each independently subject to
loss and corruption; the receiver deduplicates extra copies so the
application sees one delivery per attempt.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from math import sqrt
from typing import Mapping, Sequence

from . import airtime
from .config import ChannelModel, CrcMode, CopySpacing, EsbConfig, ScheduleError, validate
from .engine import (
    PURPOSE_CORRUPT,
    PURPOSE_ESCAPE,
    PURPOSE_JITTER,
    PURPOSE_LOSS,
    Engine,
    Event,
    RngStream,
    ticks_to_us,
    us_to_ticks,
)

PROBES = ("d0", "d1", "d2", "d3", "d4", "d5", "d6", "d7")

STAGES = (
    "tx_app_to_ipc",   # D0 -> D1
    "tx_ipc_to_esb",   # D1 -> D2
    "tx_esb_stack",    # D2 -> D3
    "radio_overhead",  # D3 -> D4, minus on-air time and copy offset
    "rx_esb_stack",    # D4 -> D5
    "rx_to_ipc",       # D5 -> D6
    "rx_ipc_to_app",   # D6 -> D7
)

# Which stage each config parameter's additive modifier lands on.  This is a
# modeling convention: end-to-end medians constrain only the sums, so the
# placement is chosen by where the work plausibly happens (CRC verification
# on the receive stack, dequeue policy and framing on the transmit stack,
# payload construction on the IPC handover, radio-parameter effects on the
# radio turnaround).
MODIFIER_STAGE = {
    "crc": "rx_esb_stack",
    "protocol": "tx_esb_stack",
    "txmode": "tx_esb_stack",
    "payload": "tx_ipc_to_esb",
    "bitrate": "radio_overhead",
    "power": "radio_overhead",
}

# Stage jitter chosen so the seven independent draws combine to ~25 us total,
# the residual spread left once the retransmission mixture is accounted for.
DEFAULT_TOTAL_JITTER_SIGMA_US = 25.0
DEFAULT_STAGE_JITTER_SIGMA_US = DEFAULT_TOTAL_JITTER_SIGMA_US / sqrt(len(STAGES))

# One escaped duplicate per 735 received payloads in the reference accounting
# with CRC disabled; with CRC enabled dedup is reliable.
DEFAULT_DEDUP_ESCAPE_PROB = 1.0 / 735.0


def _config_param_values(config: EsbConfig) -> dict[str, str]:
    return {
        "crc": config.crc_mode.value,
        "protocol": config.protocol_mode.value,
        "bitrate": config.bitrate_mode.value,
        "txmode": config.tx_mode.value,
        "payload": config.payload_mode.value,
        "power": str(config.tx_power_dbm),
    }


@dataclass(frozen=True)
class PipelineModel:
    """Per-stage base delays, jitter spec, and per-parameter modifiers.

    Base delays are microseconds at full precision; they snap to the 0.1 us
    clock grid only when an attempt is scheduled.  `modifiers_us` maps
    (parameter, value) pairs - using the experiment-file spellings, e.g.
    ("crc", "16") - to additive microseconds on the stage given by
    MODIFIER_STAGE.  Jitter is drawn per stage and truncated so no stage goes
    negative; `jitter_sigma_us` holds one standard deviation per stage
    ("uniform" family draws with the same SD).
    """

    tx_app_to_ipc_us: float
    tx_ipc_to_esb_us: float
    tx_esb_stack_us: float
    radio_overhead_us: float
    rx_esb_stack_us: float
    rx_to_ipc_us: float
    rx_ipc_to_app_us: float
    jitter_family: str = "normal"  # off | normal | uniform
    jitter_sigma_us: tuple[float, ...] = (DEFAULT_STAGE_JITTER_SIGMA_US,) * len(STAGES)
    modifiers_us: Mapping[tuple[str, str], float] = field(default_factory=dict)
    dedup_escape_prob: float = DEFAULT_DEDUP_ESCAPE_PROB

    def __post_init__(self):
        for stage in STAGES:
            if getattr(self, stage + "_us") < 0:
                raise ValueError(f"stage {stage} has negative base delay")
        if self.jitter_family not in ("off", "normal", "uniform"):
            raise ValueError(f"unknown jitter family {self.jitter_family!r}")
        if len(self.jitter_sigma_us) != len(STAGES):
            raise ValueError(f"expected {len(STAGES)} jitter sigmas, got {len(self.jitter_sigma_us)}")
        if not 0.0 <= self.dedup_escape_prob <= 1.0:
            raise ValueError(f"dedup_escape_prob out of range: {self.dedup_escape_prob}")

    def stage_base_us(self, stage: str) -> float:
        return getattr(self, stage + "_us")

    def stage_totals_us(self, config: EsbConfig) -> tuple[float, ...]:
        """Base plus the config's applicable modifiers, per stage."""
        extras = dict.fromkeys(STAGES, 0.0)
        values = _config_param_values(config)
        for (param, value), add_us in self.modifiers_us.items():
            if values.get(param) == value:
                extras[MODIFIER_STAGE[param]] += add_us
        return tuple(self.stage_base_us(s) + extras[s] for s in STAGES)

    def zero_jitter(self) -> "PipelineModel":
        from dataclasses import replace

        return replace(self, jitter_family="off")


class Outcome(str, Enum):
    DELIVERED = "delivered"
    DELIVERED_CORRUPTED = "delivered-corrupted"
    LOST = "lost"


@dataclass
class TransmissionRecord:
    """One broadcast attempt: probe timestamps and delivery accounting.

    Probe times are absolute clock ticks (0.1 us); entries are None for
    probes never reached.  `delivered_copy` is the index of the copy that
    surfaced to the receiver application, or None when the attempt was lost.
    """

    config_name: str
    config_hash: str
    round_index: int
    attempt: int
    seed: int
    probes_ticks: tuple[int | None, ...]
    delivered_copy: int | None
    outcome: Outcome
    duplicates_suppressed: int = 0
    duplicates_delivered: int = 0

    def probe_us(self, name: str) -> float | None:
        ticks = self.probes_ticks[PROBES.index(name)]
        return None if ticks is None else ticks_to_us(ticks)

    def interval_us(self, start: str, end: str) -> float | None:
        a = self.probes_ticks[PROBES.index(start)]
        b = self.probes_ticks[PROBES.index(end)]
        if a is None or b is None:
            return None
        return ticks_to_us(b - a)


class FifoOverflowError(RuntimeError):
    pass


class TxFifo:
    """Transmit-side payload queue; dequeue order is strictly FIFO."""

    def __init__(self, capacity: int = 8):
        self.capacity = capacity
        self._items: list[object] = []

    def push(self, payload: object) -> None:
        if len(self._items) >= self.capacity:
            raise FifoOverflowError(f"TX FIFO full (capacity {self.capacity})")
        self._items.append(payload)

    def pop(self) -> object:
        return self._items.pop(0)

    def __len__(self) -> int:
        return len(self._items)


def copy_offsets_ticks(config: EsbConfig) -> list[int]:
    """Start-time offsets of every copy relative to the first, in ticks."""
    delay = us_to_ticks(config.retransmit_delay_us)
    if config.copy_spacing is CopySpacing.END_TO_START:
        delay += airtime.on_air_ticks(config)
    return [k * delay for k in range(config.copies)]


def schedule_copies(config: EsbConfig, t_d3_us: float = 0.0) -> list[float]:
    """Start times of all copies for an attempt whose radio handoff is at
    `t_d3_us`.  Copies are unconditional: no acknowledgements exist in
    broadcast mode, so every copy is sent even after a successful delivery."""
    base = us_to_ticks(t_d3_us)
    return [ticks_to_us(base + off) for off in copy_offsets_ticks(config)]


@dataclass(frozen=True)
class DedupResult:
    kept: int
    suppressed: int
    delivered_duplicates: int


def dedup(
    copies: Sequence[int],
    crc_mode: CrcMode,
    escape_prob: float = DEFAULT_DEDUP_ESCAPE_PROB,
    rng: RngStream | None = None,
) -> DedupResult:
    """Receiver-side duplicate suppression over the copies of one attempt
    that reached the application filter.

    Exactly one copy (the earliest) surfaces.  With CRC enabled the remaining
    copies are recognized and suppressed reliably; with CRC disabled each one
    escapes suppression with `escape_prob` and reaches the application as a
    duplicate delivery.
    """
    if not copies:
        raise ValueError("dedup requires at least one delivered copy")
    kept = min(copies)
    suppressed = 0
    escaped = 0
    for _ in range(len(copies) - 1):
        if crc_mode is CrcMode.OFF and escape_prob > 0.0:
            if rng is None:
                raise ValueError("dedup with a non-zero escape probability needs an rng")
            if rng.bernoulli(escape_prob):
                escaped += 1
                continue
        suppressed += 1
    return DedupResult(kept=kept, suppressed=suppressed, delivered_duplicates=escaped)


class AttemptStreams:
    """The four purpose streams one attempt draws from.

    Instances are reusable: `rekey` repoints all purposes at another
    (round, attempt) pair, which the series runner uses to avoid rebuilding
    generators per attempt.
    """

    def __init__(self, seed: int, round_index: int = 0, attempt: int = 0, namespace: tuple[int, ...] = ()):
        self.seed = seed
        self.loss = RngStream(seed, (round_index, attempt, PURPOSE_LOSS), namespace)
        self.corrupt = RngStream(seed, (round_index, attempt, PURPOSE_CORRUPT), namespace)
        self.jitter = RngStream(seed, (round_index, attempt, PURPOSE_JITTER), namespace)
        self.escape = RngStream(seed, (round_index, attempt, PURPOSE_ESCAPE), namespace)

    def rekey(self, round_index: int, attempt: int) -> "AttemptStreams":
        self.loss.rekey((round_index, attempt, PURPOSE_LOSS))
        self.corrupt.rekey((round_index, attempt, PURPOSE_CORRUPT))
        self.jitter.rekey((round_index, attempt, PURPOSE_JITTER))
        self.escape.rekey((round_index, attempt, PURPOSE_ESCAPE))
        return self


def _stage_jitter_us(pipeline: PipelineModel, streams: AttemptStreams) -> list[float]:
    """One jitter draw per stage, in microseconds (truncation happens later)."""
    if pipeline.jitter_family == "off":
        return [0.0] * len(STAGES)
    if pipeline.jitter_family == "uniform":
        # same per-stage SD as the normal family: halfwidth = sigma * sqrt(3)
        draws = streams.jitter.uniform(-sqrt(3.0), sqrt(3.0), len(STAGES))
    else:
        draws = streams.jitter.normal(1.0, len(STAGES))
    return [float(d) * s for d, s in zip(draws, pipeline.jitter_sigma_us)]


class _Attempt:
    """Event handlers for one attempt; shared by the TX and RX node roles."""

    TX_NODE = 0
    RX_NODE = 1

    def __init__(
        self,
        config: EsbConfig,
        channel: ChannelModel,
        pipeline: PipelineModel,
        streams: AttemptStreams,
        stage_totals_us: tuple[float, ...],
        on_air: int,
        offsets: list[int],
    ):
        self.config = config
        self.pipeline = pipeline
        self.on_air = on_air
        self.offsets = offsets
        copies = config.copies
        self.lost = streams.loss.bernoulli(channel.p_loss, copies)
        self.corrupted = streams.corrupt.bernoulli(channel.p_corrupt, copies)
        self.escaped = streams.escape.bernoulli(pipeline.dedup_escape_prob, copies)
        jitter = _stage_jitter_us(pipeline, streams)
        # floor of one tick: jitter never drives a stage negative, and probe
        # timestamps stay strictly increasing
        self.stage_ticks = [
            max(1, us_to_ticks(base + j)) for base, j in zip(stage_totals_us, jitter)
        ]
        self.fifo = TxFifo()
        self.probes: list[int | None] = [None] * len(PROBES)
        self.delivered_copy: int | None = None
        self.delivered_corrupted = False
        self.suppressed = 0
        self.escapes_delivered = 0

    def install(self, engine: Engine) -> None:
        engine.on("cmd", self.on_cmd)
        engine.on("d1", self.on_d1)
        engine.on("d2", self.on_d2)
        engine.on("d3", self.on_d3)
        engine.on("copy-rx", self.on_copy_rx)
        engine.on("d4", self.on_d4)
        engine.on("d5", self.on_d5)
        engine.on("d6", self.on_d6)
        engine.on("d7", self.on_d7)

    # --- transmitter side ---------------------------------------------------

    def on_cmd(self, engine: Engine, event: Event) -> None:
        self.probes[0] = engine.now_ticks
        engine.schedule_after(self.stage_ticks[0], "d1", self.TX_NODE)

    def on_d1(self, engine: Engine, event: Event) -> None:
        self.probes[1] = engine.now_ticks
        engine.schedule_after(self.stage_ticks[1], "d2", self.TX_NODE)

    def on_d2(self, engine: Engine, event: Event) -> None:
        self.probes[2] = engine.now_ticks
        self.fifo.push("payload")  # written to the TX FIFO at D2
        engine.schedule_after(self.stage_ticks[2], "d3", self.TX_NODE)

    def on_d3(self, engine: Engine, event: Event) -> None:
        self.probes[3] = engine.now_ticks
        self.fifo.pop()  # dequeued per tx_mode policy; timing lives in modifiers
        for k, offset in enumerate(self.offsets):
            # the receiver sees copy k one on-air time after its start
            engine.schedule(
                Event(engine.now_ticks + offset + self.on_air, "copy-rx", self.RX_NODE, k)
            )

    # --- receiver side -------------------------------------------------------

    def on_copy_rx(self, engine: Engine, event: Event) -> None:
        k: int = event.data
        if self.lost[k]:
            return
        crc_on = self.config.crc_mode is not CrcMode.OFF
        if crc_on and self.corrupted[k]:
            return  # CRC rejects the copy; it neither delivers nor counts
        if self.delivered_copy is None:
            self.delivered_copy = k
            self.delivered_corrupted = bool(self.corrupted[k])
            engine.schedule_after(self.stage_ticks[3], "d4", self.RX_NODE)
        elif not crc_on and self.escaped[k]:
            self.escapes_delivered += 1
        else:
            self.suppressed += 1

    def on_d4(self, engine: Engine, event: Event) -> None:
        self.probes[4] = engine.now_ticks
        engine.schedule_after(self.stage_ticks[4], "d5", self.RX_NODE)

    def on_d5(self, engine: Engine, event: Event) -> None:
        self.probes[5] = engine.now_ticks
        engine.schedule_after(self.stage_ticks[5], "d6", self.RX_NODE)

    def on_d6(self, engine: Engine, event: Event) -> None:
        self.probes[6] = engine.now_ticks
        engine.schedule_after(self.stage_ticks[6], "d7", self.RX_NODE)

    def on_d7(self, engine: Engine, event: Event) -> None:
        self.probes[7] = engine.now_ticks


def transmit(
    config: EsbConfig,
    channel: ChannelModel,
    pipeline: PipelineModel,
    streams: AttemptStreams,
    *,
    start_ticks: int = 0,
    config_name: str = "",
    round_index: int = 0,
    attempt: int = 0,
    engine: Engine | None = None,
    _stage_totals_us: tuple[float, ...] | None = None,
    _on_air: int | None = None,
    _offsets: list[int] | None = None,
) -> TransmissionRecord:
    """Run one broadcast attempt and return its record.

    Expects a validated config.  The command is issued at `start_ticks`; all
    probe timestamps in the record are absolute.  A lost attempt is a normal
    outcome, not an error.  Pass an engine to inspect the clock afterwards;
    it idles only after the whole copy train is off the air, which can be
    well past D7.
    """
    totals = _stage_totals_us if _stage_totals_us is not None else pipeline.stage_totals_us(config)
    on_air = _on_air if _on_air is not None else airtime.on_air_ticks(config)
    offsets = _offsets if _offsets is not None else copy_offsets_ticks(config)

    attempt_state = _Attempt(config, channel, pipeline, streams, totals, on_air, offsets)
    if engine is None:
        engine = Engine(start_ticks)
    attempt_state.install(engine)
    engine.schedule(Event(start_ticks, "cmd", _Attempt.TX_NODE))
    engine.run_until_idle()

    if attempt_state.delivered_copy is None:
        outcome = Outcome.LOST
    elif attempt_state.delivered_corrupted:
        outcome = Outcome.DELIVERED_CORRUPTED
    else:
        outcome = Outcome.DELIVERED
    return TransmissionRecord(
        config_name=config_name,
        config_hash=config.digest(),
        round_index=round_index,
        attempt=attempt,
        seed=streams.seed,
        probes_ticks=tuple(attempt_state.probes),
        delivered_copy=attempt_state.delivered_copy,
        outcome=outcome,
        duplicates_suppressed=attempt_state.suppressed,
        duplicates_delivered=attempt_state.escapes_delivered,
    )


DEFAULT_ATTEMPT_SPACING_US = 6000.0  # one capture window per attempt


def run_attempt_series(
    config: EsbConfig,
    channel: ChannelModel,
    pipeline: PipelineModel,
    n: int,
    *,
    seed: int,
    config_name: str = "",
    namespace: tuple[int, ...] = (),
    round_index: int = 0,
    start_attempt: int = 0,
    spacing_us: float = DEFAULT_ATTEMPT_SPACING_US,
) -> list[TransmissionRecord]:
    """Run `n` attempts with independent randomness, deterministic per seed.

    Attempt starts are spaced `spacing_us` apart on a per-config timeline, so
    a record is identical no matter which worker produced it or in which
    order attempts ran.
    """
    if n < 1:
        raise ValueError("need at least one attempt")
    validate(config)
    offsets = copy_offsets_ticks(config)
    on_air = airtime.on_air_ticks(config)
    spacing = us_to_ticks(spacing_us)
    if spacing < offsets[-1] + on_air:
        raise ScheduleError(
            f"attempt spacing {spacing_us} us overlaps the copy train "
            f"({ticks_to_us(offsets[-1] + on_air)} us)"
        )
    totals = pipeline.stage_totals_us(config)
    streams = AttemptStreams(seed, namespace=namespace)
    records = []
    for i in range(n):
        attempt = start_attempt + i
        streams.rekey(round_index, attempt)
        records.append(
            transmit(
                config,
                channel,
                pipeline,
                streams,
                start_ticks=attempt * spacing,
                config_name=config_name,
                round_index=round_index,
                attempt=attempt,
                _stage_totals_us=totals,
                _on_air=on_air,
                _offsets=offsets,
            )
        )
    return records
