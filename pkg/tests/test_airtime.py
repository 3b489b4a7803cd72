import dataclasses
import itertools

import pytest
from hypothesis import given, strategies as st

from esbsim.airtime import (
    FrameLayout,
    LayoutFileError,
    default_layouts,
    duration_us,
    frame_bits,
    on_air_ticks,
    on_air_time_us,
    parse_layout_file,
    render_layout_file,
)
from esbsim.config import BitrateMode, CrcMode, EsbConfig, ProtocolMode, olcfg_preset


def test_olcfg_frame_is_73_bits():
    # preamble 16 + address 40 + pcf 9 + payload 8 + crc 0
    assert frame_bits(olcfg_preset()) == 16 + 40 + 9 + 8 + 0 == 73


def test_crc16_adds_sixteen_bits():
    cfg = dataclasses.replace(olcfg_preset(), crc_mode=CrcMode.CRC16)
    assert frame_bits(cfg) == 89


def test_zero_payload_leaves_header_only():
    cfg = dataclasses.replace(olcfg_preset(), payload_len_bytes=0)
    assert frame_bits(cfg) == 16 + 40 + 9


def test_olcfg_on_air_time():
    assert on_air_time_us(olcfg_preset()) == 73 / 2 == 36.5


def test_slow_mode_eight_byte_crc16_frame():
    cfg = EsbConfig(
        crc_mode=CrcMode.CRC16,
        bitrate_mode=BitrateMode.MBPS1,
        payload_len_bytes=8,
        retransmit_delay_us=435.0,
    )
    assert frame_bits(cfg) == 8 + 40 + 9 + 64 + 16 == 137
    assert on_air_time_us(cfg) == 137.0


@given(bits=st.integers(min_value=1, max_value=4000))
def test_doubling_the_bitrate_halves_the_duration(bits):
    assert duration_us(bits, BitrateMode.MBPS1) == 2 * duration_us(bits, BitrateMode.MBPS2)


def _all_mode_configs(payload=1):
    for crc, protocol, bitrate in itertools.product(CrcMode, ProtocolMode, BitrateMode):
        yield EsbConfig(
            crc_mode=crc,
            protocol_mode=protocol,
            bitrate_mode=bitrate,
            payload_len_bytes=payload,
            retransmit_delay_us=5000.0,
        )


def test_on_air_time_times_bitrate_is_frame_bits_exactly():
    for cfg in _all_mode_configs(payload=13):
        assert on_air_time_us(cfg) * cfg.bitrate_mode.bits_per_us == frame_bits(cfg)
        assert on_air_ticks(cfg) == round(on_air_time_us(cfg) * 10)


@given(payload=st.integers(min_value=1, max_value=251))
def test_on_air_time_strictly_increases_with_payload(payload):
    for cfg in _all_mode_configs(payload):
        bigger = dataclasses.replace(cfg, payload_len_bytes=payload + 1)
        assert on_air_time_us(bigger) > on_air_time_us(cfg)


def test_crc_ordering_matches_observed_medians():
    # disabling the checksum always shortens the frame: off < 8 bit < 16 bit
    for cfg in _all_mode_configs(payload=8):
        t_off = on_air_time_us(dataclasses.replace(cfg, crc_mode=CrcMode.OFF))
        t_8 = on_air_time_us(dataclasses.replace(cfg, crc_mode=CrcMode.CRC8))
        t_16 = on_air_time_us(dataclasses.replace(cfg, crc_mode=CrcMode.CRC16))
        assert t_off < t_8 < t_16


def test_static_mode_drops_the_packet_control_field():
    dynamic = olcfg_preset()
    static = dataclasses.replace(dynamic, protocol_mode=ProtocolMode.STATIC)
    assert frame_bits(dynamic) - frame_bits(static) == 9


class TestLayoutFile:
    def test_default_table_covers_every_mode_pair(self):
        table = default_layouts()
        assert set(table) == set(itertools.product(BitrateMode, ProtocolMode))

    def test_round_trip(self):
        table = default_layouts()
        assert parse_layout_file(render_layout_file(table)) == table

    def test_custom_layout_overrides_the_default(self):
        table = default_layouts()
        table[(BitrateMode.MBPS2_BLE, ProtocolMode.DYNAMIC)] = FrameLayout(8, 24, 9)
        assert frame_bits(olcfg_preset(), table) == 8 + 24 + 9 + 8

    @pytest.mark.parametrize(
        "text",
        [
            "[layout 2M]",  # missing protocol
            "[layout 9M dynamic]\npreamble_bits=8\naddress_bits=40\npcf_bits=0",
            "[layout 2M dynamic]\npreamble_bits=8",  # incomplete
            "[layout 2M dynamic]\nwrong_key=1",
            "preamble_bits=8",  # key before any section
        ],
    )
    def test_malformed_files_raise(self, text):
        with pytest.raises(LayoutFileError):
            parse_layout_file(text)

    def test_negative_bit_counts_rejected(self):
        with pytest.raises(ValueError):
            FrameLayout(-1, 40, 9)
