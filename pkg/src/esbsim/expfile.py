"""Flat key-value experiment files with section headers.

The format is line-oriented and diff-friendly so experiment provenance can
live in version control: `#` comments, `[section]` headers (key=value pairs
may follow on the header line or on their own lines), one `[config <name>]`
section per configuration, optional `[channel]`, `[ble]`, `[targets]`, and
`[pipeline]` sections.  Pipeline files produced by calibration use the same
syntax with `[stages]`, `[jitter]`, `[dedup]`, and `[modifiers]` sections.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from .analytics import CalibrationTargets
from .config import (
    BitrateMode,
    BleConfig,
    ChannelModel,
    CopySpacing,
    CrcMode,
    EsbConfig,
    PayloadMode,
    ProtocolMode,
    TxMode,
)
from .link import MODIFIER_STAGE, PipelineModel, STAGES
from .sweep import SweepPlan


class ParseError(ValueError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class UnknownKeyError(ParseError):
    def __init__(self, line_no: int, name: str):
        self.name = name
        super().__init__(line_no, f"unknown key {name!r}")


@dataclass(frozen=True)
class Experiment:
    """A parsed experiment file: the sweep plan plus its environment."""

    plan: SweepPlan
    channel: ChannelModel = ChannelModel()
    ble: BleConfig | None = None
    targets: CalibrationTargets | None = None


def _parse_bool(value: str) -> bool:
    if value in ("true", "yes", "1"):
        return True
    if value in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {value}")
    return seed


_SWEEP_KEYS: dict[str, Callable[[str], object]] = {
    "seed": _parse_seed,
    "rounds": int,
    "attempts": int,
    "shuffle": _parse_bool,
}

_CONFIG_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "crc": ("crc_mode", CrcMode),
    "protocol": ("protocol_mode", ProtocolMode),
    "bitrate": ("bitrate_mode", BitrateMode),
    "txmode": ("tx_mode", TxMode),
    "power": ("tx_power_dbm", int),
    "payload": ("payload_mode", PayloadMode),
    "payload_len": ("payload_len_bytes", int),
    "retransmits": ("retransmit_count", int),
    "retransmit_delay_us": ("retransmit_delay_us", float),
    "spacing": ("copy_spacing", CopySpacing),
}

_CHANNEL_KEYS = {"p_loss": float, "p_corrupt": float}
_BLE_KEYS = {"connection_interval_us": float, "transfer_us": float}
_TARGET_KEYS = {"d0d7": float, "d2d5": float, "d3d4": float}


def _tokenize(text: str):
    """Yield (line_no, section_parts | None, pairs) per meaningful line."""
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        section = None
        if line.startswith("["):
            close = line.find("]")
            if close < 0:
                raise ParseError(line_no, "unterminated section header")
            section = line[1:close].split()
            if not section:
                raise ParseError(line_no, "empty section header")
            line = line[close + 1 :].strip()
        pairs = []
        for token in line.split():
            if "=" not in token:
                raise ParseError(line_no, f"expected key=value, got {token!r}")
            key, _, value = token.partition("=")
            if not key or not value:
                raise ParseError(line_no, f"malformed pair {token!r}")
            pairs.append((key, value))
        yield line_no, section, pairs


def parse_experiment_file(text: str) -> Experiment:
    """Parse an experiment file into a fully resolved plan and environment.

    Raises ParseError with the offending line, or UnknownKeyError for a key
    the section's schema does not define.  Duplicate keys and duplicate
    sections are errors: experiment files are provenance, so silent
    last-wins merging would hide mistakes.
    """
    sweep_kv: dict[str, object] = {}
    channel_kv: dict[str, float] = {}
    ble_kv: dict[str, float] = {}
    targets_kv: dict[str, float] = {}
    configs: list[tuple[str, dict[str, object]]] = []
    seen_sections: set[str] = set()
    current: str | None = None
    current_config: dict[str, object] | None = None

    def assign(line_no: int, key: str, value: str) -> None:
        if current is None:
            raise ParseError(line_no, f"key {key!r} before any section header")
        if current == "sweep":
            if key not in _SWEEP_KEYS:
                raise UnknownKeyError(line_no, key)
            if key in sweep_kv:
                raise ParseError(line_no, f"duplicate key {key!r}")
            sweep_kv[key] = _convert(line_no, key, value, _SWEEP_KEYS[key])
        elif current == "config":
            assert current_config is not None
            if key not in _CONFIG_KEYS:
                raise UnknownKeyError(line_no, key)
            field_name, conv = _CONFIG_KEYS[key]
            if field_name in current_config:
                raise ParseError(line_no, f"duplicate key {key!r}")
            current_config[field_name] = _convert(line_no, key, value, conv)
        elif current == "channel":
            if key not in _CHANNEL_KEYS:
                raise UnknownKeyError(line_no, key)
            if key in channel_kv:
                raise ParseError(line_no, f"duplicate key {key!r}")
            channel_kv[key] = _convert(line_no, key, value, _CHANNEL_KEYS[key])
        elif current == "ble":
            if key not in _BLE_KEYS:
                raise UnknownKeyError(line_no, key)
            if key in ble_kv:
                raise ParseError(line_no, f"duplicate key {key!r}")
            ble_kv[key] = _convert(line_no, key, value, _BLE_KEYS[key])
        elif current == "targets":
            if key not in _TARGET_KEYS:
                raise UnknownKeyError(line_no, key)
            if key in targets_kv:
                raise ParseError(line_no, f"duplicate key {key!r}")
            targets_kv[key] = _convert(line_no, key, value, _TARGET_KEYS[key])

    saw_anything = False
    for line_no, section, pairs in _tokenize(text):
        saw_anything = True
        if section is not None:
            name = section[0]
            if name == "config":
                if len(section) != 2:
                    raise ParseError(line_no, "config sections need a name: [config <name>]")
                if any(c_name == section[1] for c_name, _ in configs):
                    raise ParseError(line_no, f"duplicate config section {section[1]!r}")
                current = "config"
                current_config = {}
                configs.append((section[1], current_config))
            elif name in ("sweep", "channel", "ble", "targets"):
                if len(section) != 1:
                    raise ParseError(line_no, f"section [{name}] takes no arguments")
                if name in seen_sections:
                    raise ParseError(line_no, f"duplicate section [{name}]")
                seen_sections.add(name)
                current = name
            else:
                raise ParseError(line_no, f"unknown section {name!r}")
        for key, value in pairs:
            assign(line_no, key, value)

    if not saw_anything:
        raise ParseError(0, "empty experiment file")
    if not configs:
        raise ParseError(0, "no [config <name>] sections")

    try:
        plan = SweepPlan(
            configs=tuple((name, EsbConfig(**kv)) for name, kv in configs),
            rounds=sweep_kv.get("rounds", 5),
            attempts_per_round=sweep_kv.get("attempts", 150),
            shuffle=sweep_kv.get("shuffle", True),
            seed=sweep_kv.get("seed", 0),
        )
        channel = ChannelModel(**channel_kv)
        ble = None
        if ble_kv:
            ble = BleConfig(
                connection_interval_us=ble_kv.get("connection_interval_us", 7500.0),
                transfer_time_us=ble_kv.get("transfer_us", 0.0),
            )
        targets = None
        if targets_kv:
            missing = set(_TARGET_KEYS) - targets_kv.keys()
            if missing:
                raise ParseError(0, f"[targets] missing {sorted(missing)}")
            targets = CalibrationTargets(
                d0d7_us=targets_kv["d0d7"], d2d5_us=targets_kv["d2d5"], d3d4_us=targets_kv["d3d4"]
            )
    except ParseError:
        raise
    except ValueError as exc:
        raise ParseError(0, str(exc)) from exc
    return Experiment(plan=plan, channel=channel, ble=ble, targets=targets)


def _convert(line_no: int, key: str, value: str, conv: Callable[[str], object]):
    try:
        return conv(value)
    except ValueError as exc:
        raise ParseError(line_no, f"bad value for {key!r}: {exc}") from exc


def render_experiment_file(exp: Experiment) -> str:
    """Canonical rendering; parse(render(parse(x))) == parse(x)."""
    plan = exp.plan
    lines = [
        "[sweep]",
        f"seed={plan.seed}",
        f"rounds={plan.rounds}",
        f"attempts={plan.attempts_per_round}",
        f"shuffle={'true' if plan.shuffle else 'false'}",
    ]
    for name, config in plan.configs:
        lines.append(f"[config {name}]")
        lines.append(f"crc={config.crc_mode.value}")
        lines.append(f"protocol={config.protocol_mode.value}")
        lines.append(f"bitrate={config.bitrate_mode.value}")
        lines.append(f"txmode={config.tx_mode.value}")
        lines.append(f"power={config.tx_power_dbm}")
        lines.append(f"payload={config.payload_mode.value}")
        lines.append(f"payload_len={config.payload_len_bytes}")
        lines.append(f"retransmits={config.retransmit_count}")
        lines.append(f"retransmit_delay_us={config.retransmit_delay_us:g}")
        lines.append(f"spacing={config.copy_spacing.value}")
    lines.append("[channel]")
    lines.append(f"p_loss={exp.channel.p_loss:g}")
    lines.append(f"p_corrupt={exp.channel.p_corrupt:g}")
    if exp.ble is not None:
        lines.append("[ble]")
        lines.append(f"connection_interval_us={exp.ble.connection_interval_us:g}")
        lines.append(f"transfer_us={exp.ble.transfer_time_us:g}")
    if exp.targets is not None:
        lines.append("[targets]")
        lines.append(f"d0d7={exp.targets.d0d7_us:g}")
        lines.append(f"d2d5={exp.targets.d2d5_us:g}")
        lines.append(f"d3d4={exp.targets.d3d4_us:g}")
    return "\n".join(lines) + "\n"


def apply_override(exp: Experiment, assignment: str) -> Experiment:
    """Apply one `section.key=value` override to a parsed experiment.

    Paths: `sweep.<key>`, `channel.<key>`, `ble.<key>`, `targets.<key>`, and
    `config.<name>.<key>` with the same keys and value syntax as the file.
    """
    if "=" not in assignment:
        raise ParseError(0, f"override needs key=value, got {assignment!r}")
    path, _, value = assignment.partition("=")
    parts = path.split(".")
    try:
        if parts[0] == "sweep" and len(parts) == 2 and parts[1] in _SWEEP_KEYS:
            field = {"attempts": "attempts_per_round"}.get(parts[1], parts[1])
            plan = replace(exp.plan, **{field: _SWEEP_KEYS[parts[1]](value)})
            return replace(exp, plan=plan)
        if parts[0] == "channel" and len(parts) == 2 and parts[1] in _CHANNEL_KEYS:
            return replace(exp, channel=replace(exp.channel, **{parts[1]: float(value)}))
        if parts[0] == "ble" and len(parts) == 2 and parts[1] in _BLE_KEYS:
            base = exp.ble or BleConfig()
            field = {"transfer_us": "transfer_time_us"}.get(parts[1], parts[1])
            return replace(exp, ble=replace(base, **{field: float(value)}))
        if parts[0] == "targets" and len(parts) == 2 and parts[1] in _TARGET_KEYS:
            base = exp.targets
            if base is None:
                raise ParseError(0, "cannot override targets: none defined")
            return replace(exp, targets=replace(base, **{parts[1] + "_us": float(value)}))
        if parts[0] == "config" and len(parts) == 3 and parts[2] in _CONFIG_KEYS:
            name = parts[1]
            field_name, conv = _CONFIG_KEYS[parts[2]]
            new_configs = []
            found = False
            for cfg_name, config in exp.plan.configs:
                if cfg_name == name:
                    config = replace(config, **{field_name: conv(value)})
                    found = True
                new_configs.append((cfg_name, config))
            if not found:
                raise ParseError(0, f"no config named {name!r} to override")
            return replace(exp, plan=replace(exp.plan, configs=tuple(new_configs)))
    except ParseError:
        raise
    except ValueError as exc:
        raise ParseError(0, f"bad override {assignment!r}: {exc}") from exc
    raise UnknownKeyError(0, path)


# --- pipeline files -------------------------------------------------------------


def parse_pipeline_file(text: str) -> PipelineModel:
    """Parse a calibrated pipeline written by `render_pipeline_file`."""
    stages: dict[str, float] = {}
    jitter_family = "normal"
    jitter_sigma: tuple[float, ...] | None = None
    escape_prob: float | None = None
    modifiers: dict[tuple[str, str], float] = {}
    current = None
    for line_no, section, pairs in _tokenize(text):
        if section is not None:
            name = section[0]
            if name not in ("stages", "jitter", "dedup", "modifiers"):
                raise ParseError(line_no, f"unknown section {name!r}")
            current = name
        for key, value in pairs:
            if current == "stages":
                stage = key.removesuffix("_us")
                if stage not in STAGES:
                    raise UnknownKeyError(line_no, key)
                stages[stage] = _convert(line_no, key, value, float)
            elif current == "jitter":
                if key == "family":
                    jitter_family = value
                elif key == "sigma_us":
                    parts = value.split(",")
                    jitter_sigma = tuple(_convert(line_no, key, p, float) for p in parts)
                else:
                    raise UnknownKeyError(line_no, key)
            elif current == "dedup":
                if key != "escape_prob":
                    raise UnknownKeyError(line_no, key)
                escape_prob = _convert(line_no, key, value, float)
            elif current == "modifiers":
                param, _, param_value = key.partition(".")
                if param not in MODIFIER_STAGE or not param_value:
                    raise UnknownKeyError(line_no, key)
                modifiers[(param, param_value)] = _convert(line_no, key, value, float)
            else:
                raise ParseError(line_no, f"key {key!r} before any section header")
    missing = set(STAGES) - stages.keys()
    if missing:
        raise ParseError(0, f"[stages] missing {sorted(missing)}")
    if jitter_sigma is None:
        jitter_sigma = (0.0,) * len(STAGES)
    elif len(jitter_sigma) == 1:
        jitter_sigma = jitter_sigma * len(STAGES)
    kwargs = dict(
        jitter_family=jitter_family,
        jitter_sigma_us=jitter_sigma,
        modifiers_us=modifiers,
    )
    if escape_prob is not None:
        kwargs["dedup_escape_prob"] = escape_prob
    try:
        return PipelineModel(**{s + "_us": stages[s] for s in STAGES}, **kwargs)
    except ValueError as exc:
        raise ParseError(0, str(exc)) from exc


def render_pipeline_file(pipeline: PipelineModel, header: str = "") -> str:
    # repr keeps full float precision, so parse(render(p)) == p
    lines = []
    if header:
        lines.extend("# " + h for h in header.splitlines())
    lines.append("[stages]")
    for stage in STAGES:
        lines.append(f"{stage}_us={pipeline.stage_base_us(stage)!r}")
    lines.append("[jitter]")
    lines.append(f"family={pipeline.jitter_family}")
    sigmas = pipeline.jitter_sigma_us
    if len(set(sigmas)) == 1:
        lines.append(f"sigma_us={sigmas[0]!r}")
    else:
        lines.append("sigma_us=" + ",".join(repr(s) for s in sigmas))
    lines.append("[dedup]")
    lines.append(f"escape_prob={pipeline.dedup_escape_prob!r}")
    if pipeline.modifiers_us:
        lines.append("[modifiers]")
        for (param, value), add_us in sorted(pipeline.modifiers_us.items()):
            lines.append(f"{param}.{value}={add_us!r}")
    return "\n".join(lines) + "\n"
