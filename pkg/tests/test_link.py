import dataclasses
from collections import Counter

import pytest

from esbsim import airtime
from esbsim.analytics import (
    calibrate_pipeline,
    delivered_copy_distribution,
    olcfg_calibration_targets,
)
from esbsim.config import (
    ChannelModel,
    CopySpacing,
    CrcMode,
    PayloadMode,
    ScheduleError,
    olcfg_preset,
)
from esbsim.engine import Engine
from esbsim.link import (
    AttemptStreams,
    FifoOverflowError,
    Outcome,
    TxFifo,
    dedup,
    run_attempt_series,
    schedule_copies,
    transmit,
)

LOSSLESS = ChannelModel()


@pytest.fixture(scope="module")
def pipeline():
    return calibrate_pipeline(olcfg_calibration_targets(), olcfg_preset())


@pytest.fixture(scope="module")
def quiet_pipeline(pipeline):
    return pipeline.zero_jitter()


class TestScheduleCopies:
    def test_three_copies_at_the_configured_delay(self):
        assert schedule_copies(olcfg_preset(), 0.0) == [0.0, 435.0, 870.0]

    def test_no_retransmissions(self):
        cfg = dataclasses.replace(olcfg_preset(), retransmit_count=0)
        assert schedule_copies(cfg, 100.0) == [100.0]

    @pytest.mark.parametrize("n", range(16))
    def test_copy_count_is_retransmits_plus_one(self, n):
        cfg = dataclasses.replace(olcfg_preset(), retransmit_count=n)
        assert len(schedule_copies(cfg, 0.0)) == n + 1

    def test_end_to_start_spacing_adds_the_frame_time(self):
        cfg = dataclasses.replace(olcfg_preset(), copy_spacing=CopySpacing.END_TO_START)
        assert schedule_copies(cfg, 0.0) == [0.0, 471.5, 943.0]  # 435 + 36.5 on air


class TestTransmit:
    def test_calibrated_quiet_run_reproduces_the_reference_latency(self, quiet_pipeline):
        rec = transmit(olcfg_preset(), LOSSLESS, quiet_pipeline, AttemptStreams(1))
        assert rec.interval_us("d0", "d7") == 486.3
        assert rec.outcome is Outcome.DELIVERED
        assert rec.delivered_copy == 0

    def test_all_copies_lost(self, quiet_pipeline):
        rec = transmit(
            olcfg_preset(), ChannelModel(p_loss=1.0), quiet_pipeline, AttemptStreams(1)
        )
        assert rec.outcome is Outcome.LOST
        assert rec.delivered_copy is None
        assert rec.probes_ticks[4:] == (None,) * 4  # d4..d7 never fire
        assert None not in rec.probes_ticks[:4]  # the transmit side still ran

    def test_delivery_via_first_retransmission_shifts_d4_by_the_delay(self, quiet_pipeline):
        baseline = transmit(olcfg_preset(), LOSSLESS, quiet_pipeline, AttemptStreams(1))
        # find a seed whose loss draws kill copy 0 and keep copy 1
        channel = ChannelModel(p_loss=0.5)
        for seed in range(1000):
            streams = AttemptStreams(seed)
            lost = streams.loss.bernoulli(channel.p_loss, 3)
            if lost[0] and not lost[1]:
                streams.rekey(0, 0)
                rec = transmit(olcfg_preset(), channel, quiet_pipeline, streams)
                break
        else:
            pytest.fail("no suitable loss pattern found")
        assert rec.delivered_copy == 1
        shift = rec.probe_us("d4") - baseline.probe_us("d4")
        assert shift == 435.0

    def test_probe_chain_is_strictly_increasing(self, pipeline):
        streams = AttemptStreams(3)
        channel = ChannelModel(p_loss=0.3, p_corrupt=0.1)
        cfg = dataclasses.replace(olcfg_preset(), crc_mode=CrcMode.CRC16)
        for attempt in range(300):
            streams.rekey(0, attempt)
            rec = transmit(cfg, channel, pipeline, streams, attempt=attempt)
            present = [t for t in rec.probes_ticks if t is not None]
            assert all(a < b for a, b in zip(present, present[1:]))

    def test_air_interval_identity(self, quiet_pipeline):
        # d4 - d3 = copy offset + on-air time + radio overhead, exactly
        streams = AttemptStreams(11)
        channel = ChannelModel(p_loss=0.45)
        on_air = airtime.on_air_ticks(olcfg_preset())
        overhead = round(quiet_pipeline.radio_overhead_us * 10)
        for attempt in range(500):
            streams.rekey(0, attempt)
            rec = transmit(olcfg_preset(), channel, quiet_pipeline, streams)
            if rec.delivered_copy is None:
                continue
            gap = rec.probes_ticks[4] - rec.probes_ticks[3]
            assert gap == rec.delivered_copy * 4350 + on_air + overhead

    def test_crc_rejects_corrupted_copies_entirely(self, quiet_pipeline):
        cfg = dataclasses.replace(olcfg_preset(), crc_mode=CrcMode.CRC16)
        rec = transmit(cfg, ChannelModel(p_corrupt=1.0), quiet_pipeline, AttemptStreams(5))
        assert rec.outcome is Outcome.LOST

    def test_crc_off_delivers_corrupted_payloads(self, quiet_pipeline):
        rec = transmit(
            olcfg_preset(), ChannelModel(p_corrupt=1.0), quiet_pipeline, AttemptStreams(5)
        )
        assert rec.outcome is Outcome.DELIVERED_CORRUPTED
        assert rec.delivered_copy == 0

    def test_engine_idles_only_after_the_whole_copy_train(self, quiet_pipeline):
        engine = Engine()
        rec = transmit(
            olcfg_preset(), LOSSLESS, quiet_pipeline, AttemptStreams(1), engine=engine
        )
        final = engine.run_until_idle()  # already idle; returns the clock
        assert final >= rec.probes_ticks[7]
        # last copy leaves the air at d3 + 2*delay + on-air
        assert final == rec.probes_ticks[3] + 2 * 4350 + airtime.on_air_ticks(olcfg_preset())

    def test_standard_payload_mode_pays_its_modifier(self, quiet_pipeline):
        mods = dict(quiet_pipeline.modifiers_us)
        mods[("payload", "standard")] = 7.27
        pipe = dataclasses.replace(quiet_pipeline, modifiers_us=mods)
        optimized = transmit(olcfg_preset(), LOSSLESS, pipe, AttemptStreams(1))
        standard_cfg = dataclasses.replace(olcfg_preset(), payload_mode=PayloadMode.STANDARD)
        standard = transmit(standard_cfg, LOSSLESS, pipe, AttemptStreams(1))
        gap = standard.interval_us("d0", "d7") - optimized.interval_us("d0", "d7")
        assert gap == pytest.approx(7.3, abs=0.051)  # tick-rounded


class TestDedup:
    def test_crc_on_suppresses_every_duplicate(self):
        result = dedup([0, 1, 2], CrcMode.CRC16)
        assert result.kept == 0
        assert result.suppressed == 2
        assert result.delivered_duplicates == 0

    def test_single_copy_has_nothing_to_suppress(self):
        result = dedup([1], CrcMode.OFF)
        assert result.kept == 1
        assert result.suppressed == 0

    def test_crc_off_with_certain_escape(self):
        result = dedup([0, 1, 2], CrcMode.OFF, escape_prob=1.0, rng=AttemptStreams(1).escape)
        assert result.delivered_duplicates == 2
        assert result.suppressed == 0

    def test_crc_off_with_no_escape(self):
        result = dedup([0, 1, 2], CrcMode.OFF, escape_prob=0.0)
        assert result.delivered_duplicates == 0
        assert result.suppressed == 2

    def test_escape_needs_an_rng(self):
        with pytest.raises(ValueError):
            dedup([0, 1], CrcMode.OFF, escape_prob=0.5)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            dedup([], CrcMode.OFF)

    def test_reference_escape_rate_yields_about_one_duplicate(self, quiet_pipeline):
        # at the reference channel, 750 attempts offer ~917 duplicate
        # candidates; at 1/735 escape probability that is ~1.25 escapes
        records = run_attempt_series(
            olcfg_preset(),
            ChannelModel(p_loss=0.2655),
            quiet_pipeline,
            750,
            seed=20,
            config_name="olcfg",
        )
        total = sum(r.duplicates_delivered for r in records)
        assert total in range(0, 6)  # Poisson(1.25) mass above 5 is ~0.1%


class TestRunAttemptSeries:
    def test_yields_the_requested_record_count(self, quiet_pipeline):
        records = run_attempt_series(
            olcfg_preset(), LOSSLESS, quiet_pipeline, 150, seed=1, config_name="olcfg"
        )
        assert len(records) == 150
        assert all(r.outcome is Outcome.DELIVERED for r in records)

    def test_lossy_series_loses_about_p_cubed(self, quiet_pipeline):
        records = run_attempt_series(
            olcfg_preset(), ChannelModel(p_loss=0.2655), quiet_pipeline, 750, seed=2
        )
        lost = sum(1 for r in records if r.outcome is Outcome.LOST)
        # expected 750 * 0.2655^3 ~ 14, binomial 3 sigma ~ 11
        assert 2 <= lost <= 26

    def test_attempts_are_spaced_on_the_capture_grid(self, quiet_pipeline):
        records = run_attempt_series(
            olcfg_preset(), LOSSLESS, quiet_pipeline, 5, seed=3, spacing_us=6000.0
        )
        starts = [r.probes_ticks[0] for r in records]
        assert starts == [i * 60000 for i in range(5)]

    def test_overlapping_spacing_rejected(self, quiet_pipeline):
        with pytest.raises(ScheduleError):
            run_attempt_series(
                olcfg_preset(), LOSSLESS, quiet_pipeline, 5, seed=3, spacing_us=900.0
            )

    def test_chunked_execution_reproduces_the_full_series(self, pipeline):
        channel = ChannelModel(p_loss=0.3, p_corrupt=0.05)
        full = run_attempt_series(
            olcfg_preset(), channel, pipeline, 40, seed=9, config_name="olcfg"
        )
        head = run_attempt_series(
            olcfg_preset(), channel, pipeline, 25, seed=9, config_name="olcfg"
        )
        tail = run_attempt_series(
            olcfg_preset(), channel, pipeline, 15, seed=9, config_name="olcfg", start_attempt=25
        )
        assert full == head + tail

    def test_records_carry_provenance(self, quiet_pipeline):
        rec = run_attempt_series(
            olcfg_preset(), LOSSLESS, quiet_pipeline, 1, seed=77, config_name="olcfg"
        )[0]
        assert rec.config_name == "olcfg"
        assert rec.config_hash == olcfg_preset().digest()
        assert rec.seed == 77

    def test_zero_jitter_support_is_exactly_the_copy_offsets(self, quiet_pipeline):
        records = run_attempt_series(
            olcfg_preset(), ChannelModel(p_loss=0.2655), quiet_pipeline, 2000, seed=4
        )
        values = {
            r.interval_us("d0", "d7") for r in records if r.outcome is not Outcome.LOST
        }
        assert values == {486.3, 486.3 + 435.0, 486.3 + 870.0}

    def test_copy_frequencies_match_the_closed_form(self, quiet_pipeline):
        p = 0.2655
        n = 20_000
        records = run_attempt_series(
            olcfg_preset(), ChannelModel(p_loss=p), quiet_pipeline, n, seed=5
        )
        counts = Counter(r.delivered_copy for r in records)
        probs, lost_mass = delivered_copy_distribution(p, 3)
        for k in range(3):
            sigma = (probs[k] * (1 - probs[k]) / n) ** 0.5
            assert abs(counts[k] / n - probs[k]) < 3 * sigma
        sigma = (lost_mass * (1 - lost_mass) / n) ** 0.5
        assert abs(counts[None] / n - lost_mass) < 3 * sigma

    def test_crc_on_never_delivers_duplicates_or_corruption(self, pipeline):
        cfg = dataclasses.replace(olcfg_preset(), crc_mode=CrcMode.CRC16)
        records = run_attempt_series(
            cfg, ChannelModel(p_loss=0.2655, p_corrupt=0.02), pipeline, 750, seed=6
        )
        assert all(r.duplicates_delivered == 0 for r in records)
        assert all(r.outcome is not Outcome.DELIVERED_CORRUPTED for r in records)

    def test_lost_iff_no_delivered_copy_iff_rx_probes_absent(self, pipeline):
        records = run_attempt_series(
            olcfg_preset(), ChannelModel(p_loss=0.6, p_corrupt=0.3), pipeline, 400, seed=8
        )
        for r in records:
            lost = r.outcome is Outcome.LOST
            assert (r.delivered_copy is None) == lost
            assert (r.probes_ticks[4] is None) == lost
            assert (r.probes_ticks[7] is None) == lost


class TestTxFifo:
    def test_fifo_order(self):
        fifo = TxFifo(capacity=4)
        for item in "abc":
            fifo.push(item)
        assert [fifo.pop(), fifo.pop(), fifo.pop()] == ["a", "b", "c"]

    def test_overflow(self):
        fifo = TxFifo(capacity=1)
        fifo.push("a")
        with pytest.raises(FifoOverflowError):
            fifo.push("b")
