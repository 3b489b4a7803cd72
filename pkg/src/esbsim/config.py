"""Protocol parameter space, validation, and presets."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from enum import Enum

TX_POWER_MIN_DBM = -70
TX_POWER_MAX_DBM = 10
PAYLOAD_MAX_BYTES = 252  # radio product limit; the measurements never exceed 8

BLE_MIN_CONNECTION_INTERVAL_US = 7500.0


class CrcMode(str, Enum):
    CRC16 = "16"
    CRC8 = "8"
    OFF = "off"

    @property
    def bits(self) -> int:
        return {CrcMode.CRC16: 16, CrcMode.CRC8: 8, CrcMode.OFF: 0}[self]


class ProtocolMode(str, Enum):
    DYNAMIC = "dynamic"
    STATIC = "static"


class BitrateMode(str, Enum):
    MBPS2_BLE = "2M-ble"
    MBPS2 = "2M"
    MBPS1 = "1M"

    @property
    def bits_per_us(self) -> int:
        return 1 if self is BitrateMode.MBPS1 else 2


class TxMode(str, Enum):
    AUTOMATIC = "auto"
    MANUAL = "manual"
    MANUAL_START = "manual-start"


class PayloadMode(str, Enum):
    STANDARD = "standard"
    OPTIMIZED = "optimized"


class CopySpacing(str, Enum):
    """Reference points for the delay between consecutive copies."""

    START_TO_START = "start-to-start"
    END_TO_START = "end-to-start"


class ConfigError(ValueError):
    """Base class for configuration validation failures."""


class RangeError(ConfigError):
    def __init__(self, field: str, value, lo, hi):
        self.field = field
        self.value = value
        super().__init__(f"{field}={value!r} outside [{lo}, {hi}]")


class ScheduleError(ConfigError):
    """Copy spacing too small for the frame to fit on air."""


@dataclass(frozen=True)
class EsbConfig:
    """One point in the protocol parameter space.

    Instances are plain value objects; run `validate` before handing one to
    the simulator.  `retransmit_count` is the number of extra copies, so the
    radio sends `retransmit_count + 1` copies per attempt.
    """

    crc_mode: CrcMode = CrcMode.CRC16
    protocol_mode: ProtocolMode = ProtocolMode.DYNAMIC
    bitrate_mode: BitrateMode = BitrateMode.MBPS2
    tx_mode: TxMode = TxMode.AUTOMATIC
    tx_power_dbm: int = 0
    payload_mode: PayloadMode = PayloadMode.STANDARD
    payload_len_bytes: int = 8
    retransmit_count: int = 2
    retransmit_delay_us: float = 435.0
    copy_spacing: CopySpacing = CopySpacing.START_TO_START

    @property
    def copies(self) -> int:
        return self.retransmit_count + 1

    def digest(self) -> str:
        """Short stable hash used for provenance in output files."""
        text = ";".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))
        return hashlib.blake2b(text.encode(), digest_size=6).hexdigest()


def validate(config: EsbConfig) -> EsbConfig:
    """Return the config unchanged iff every invariant holds.

    Raises RangeError naming the offending field, or ScheduleError when the
    retransmission delay is shorter than one frame's on-air time (copies
    would overlap on air).
    """
    if not TX_POWER_MIN_DBM <= config.tx_power_dbm <= TX_POWER_MAX_DBM:
        raise RangeError("tx_power_dbm", config.tx_power_dbm, TX_POWER_MIN_DBM, TX_POWER_MAX_DBM)
    if not 1 <= config.payload_len_bytes <= PAYLOAD_MAX_BYTES:
        raise RangeError("payload_len_bytes", config.payload_len_bytes, 1, PAYLOAD_MAX_BYTES)
    if config.retransmit_count < 0:
        raise RangeError("retransmit_count", config.retransmit_count, 0, "inf")
    if config.retransmit_delay_us < 0:
        raise RangeError("retransmit_delay_us", config.retransmit_delay_us, 0, "inf")
    # airtime depends on config enums; imported lazily to keep layering simple
    from . import airtime

    frame_us = airtime.on_air_time_us(config)
    if config.retransmit_delay_us < frame_us:
        raise ScheduleError(
            f"retransmit_delay_us={config.retransmit_delay_us} shorter than "
            f"one frame on air ({frame_us} us); copies would overlap"
        )
    return config


def olcfg_preset() -> EsbConfig:
    """The lowest-latency configuration found by the reference measurements:

    CRC disabled, dynamic length, 2 Mbit/s in the BLE-flavored radio mode,
    manual TX, 0 dBm, with a 1-byte payload pre-constructed on the radio core
    and three copies spaced 435 us apart.
    """
    return EsbConfig(
        crc_mode=CrcMode.OFF,
        protocol_mode=ProtocolMode.DYNAMIC,
        bitrate_mode=BitrateMode.MBPS2_BLE,
        tx_mode=TxMode.MANUAL,
        tx_power_dbm=0,
        payload_mode=PayloadMode.OPTIMIZED,
        payload_len_bytes=1,
        retransmit_count=2,
        retransmit_delay_us=435.0,
    )


@dataclass(frozen=True)
class ChannelModel:
    """Per-copy loss and corruption probabilities, applied independently."""

    p_loss: float = 0.0
    p_corrupt: float = 0.0
    independent_copies: bool = True

    def __post_init__(self):
        if not 0.0 <= self.p_loss <= 1.0:
            raise RangeError("p_loss", self.p_loss, 0.0, 1.0)
        if not 0.0 <= self.p_corrupt <= 1.0:
            raise RangeError("p_corrupt", self.p_corrupt, 0.0, 1.0)
        if not self.independent_copies:
            raise ConfigError("only independent per-copy channel draws are modeled")


@dataclass(frozen=True)
class BleConfig:
    """Connection-interval baseline parameters."""

    connection_interval_us: float = BLE_MIN_CONNECTION_INTERVAL_US
    transfer_time_us: float = 0.0

    def __post_init__(self):
        if self.connection_interval_us < BLE_MIN_CONNECTION_INTERVAL_US:
            raise RangeError(
                "connection_interval_us", self.connection_interval_us, BLE_MIN_CONNECTION_INTERVAL_US, "inf"
            )
        if self.transfer_time_us < 0:
            raise RangeError("transfer_time_us", self.transfer_time_us, 0.0, "inf")
