"""Flat ``key = value`` config files for channels, scenarios and sweeps.

Blank lines and ``#`` comments are ignored. Keys are case-sensitive and
unknown keys are rejected so typos do not pass silently.
"""

from __future__ import annotations

import time
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .controller import AdmissionPolicy, ServiceModel, WhitelistPolicy
from .endpoints import SwitchTiming
from .harness import Scenario
from .loadgen import LoadProfile
from .simnet import ClockModel, LatencyModel, parse_distribution
from .timing import ChannelConfig, TransitionDelays


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key = value, got {raw!r}")
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _number(v: str):
    """Int, Fraction (``1/3``) or float, in that order of preference."""
    try:
        return int(v, 0)
    except ValueError:
        pass
    if "/" in v:
        return Fraction(v)
    return float(v)


def parse_start_time(v: str, now_ms: Optional[float] = None) -> float:
    """Absolute epoch seconds, or ``+N`` seconds from now (rounded up to a second)."""
    if v.startswith("+"):
        now_ms = time.time() * 1000 if now_ms is None else now_ms
        target = now_ms + float(v[1:]) * 1000
        return float(-(-target // 1000) * 1000)
    return float(v) * 1000


CHANNEL_KEYS = {
    "dpid": ("dpid", lambda v: int(v, 0)),
    "delta_ms": ("delta_ms", _number),
    "fl": ("fl", int),
    "sof_count": ("sof_count", int),
    "delta_offset_ms": ("offset_ms", _number),
    "delta_delay_ms": ("delay_ms", _number),
    "delta_delay_frac": ("delay_frac", Fraction),
    "missed_frame_threshold": ("missed_frame_threshold", int),
    "max_frames": ("max_frames", int),
    "frame_align_ms": ("frame_align_ms", _number),
    "sync": ("sync", str),
    "hold_ones": ("hold_ones", _bool),
    "reconnect_backoff_ms": ("reconnect_backoff_ms", _number),
    "check_from": ("check_from", str),
}

DELAY_KEYS = {
    "delta_sc_ms": "sc",
    "delta_dc_ms": "dc",
    "delta_ofdeny_ms": "ofdeny",
    "delta_chkconn_ms": "chkconn",
}


def channel_from(kv: dict, now_ms: Optional[float] = None) -> ChannelConfig:
    fields = {}
    for key, (name, conv) in CHANNEL_KEYS.items():
        if key in kv:
            fields[name] = conv(kv[key])
    if "start_time" in kv:
        fields["start_time_ms"] = parse_start_time(kv["start_time"], now_ms)
    try:
        return ChannelConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def delays_from(kv: dict) -> Optional[TransitionDelays]:
    """Explicit transition delays, or None if the file gives none."""
    given = {name: _number(kv[key]) for key, name in DELAY_KEYS.items() if key in kv}
    return TransitionDelays(**given) if given else None


SCENARIO_ONLY_KEYS = {
    "seed", "latency_base_ms", "latency_jitter", "drop_prob", "service_ms", "service_jitter",
    "jitter_scope", "packet_in_ms", "deny_jitter", "setup_ms", "teardown_ms", "check_ms",
    "sender_sync_error_ms", "sender_drift_ppm", "receiver_sync_error_ms", "receiver_drift_ppm",
    "load", "load_switches", "load_lambda", "load_unit_ms", "load_warmup_ms", "policy",
    "whitelist", "message", "message_len", "repetitions", "calibration_probes",
    "calibration_quantile", "sender", "lead_ms", "controller", "start_time",
}

KNOWN_KEYS = set(CHANNEL_KEYS) | set(DELAY_KEYS) | SCENARIO_ONLY_KEYS


def check_keys(kv: dict, allowed=KNOWN_KEYS):
    unknown = sorted(set(kv) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")


def scenario_from(kv: dict, base_dir: Optional[Path] = None) -> Scenario:
    check_keys(kv)
    channel = channel_from(kv, now_ms=0.0)
    g = kv.get
    latency = LatencyModel(
        base_ms=float(g("latency_base_ms", 0.5)),
        jitter=parse_distribution(g("latency_jitter", "uniform:0:1")),
        drop_prob=float(g("drop_prob", 0.0)),
    )
    packet_in = g("packet_in_ms")
    service = ServiceModel(
        per_message_ms=float(g("service_ms", 0.2)),
        jitter=parse_distribution(g("service_jitter", "none")),
        packet_in_ms=float(packet_in) if packet_in is not None else None,
        jitter_scope=g("jitter_scope", "admission"),
    )
    timing = SwitchTiming(float(g("setup_ms", 0)), float(g("teardown_ms", 0)),
                          float(g("check_ms", 0)))
    load = None
    if _bool(g("load", "off")):
        load = LoadProfile(
            n_switches=int(g("load_switches", 20)),
            rate=float(g("load_lambda", 1.0)),
            unit_ms=float(g("load_unit_ms", 1000.0)),
            warmup_ms=float(g("load_warmup_ms", 60_000.0)),
        )
    whitelist = WhitelistPolicy()
    if "whitelist" in kv:
        path = Path(kv["whitelist"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        whitelist = WhitelistPolicy.parse(path.read_text())
    try:
        return Scenario(
            channel=channel,
            latency=latency,
            service=service,
            deny_jitter=parse_distribution(g("deny_jitter", "none")),
            switch_timing=timing,
            delays=delays_from(kv),
            sender_clock=ClockModel(float(g("sender_sync_error_ms", 0)),
                                    float(g("sender_drift_ppm", 0))),
            receiver_clock=ClockModel(float(g("receiver_sync_error_ms", 0)),
                                      float(g("receiver_drift_ppm", 0))),
            load=load,
            policy=AdmissionPolicy(g("policy", "deny-second")),
            whitelist=whitelist,
            message=g("message"),
            message_len=int(g("message_len", 64)),
            repetitions=int(g("repetitions", 10)),
            seed=int(g("seed", 0)),
            sender_enabled=_bool(g("sender", "on")),
            lead_ms=float(g("lead_ms", 1000.0)),
            calibration_probes=int(g("calibration_probes", 20)),
            calibration_quantile=float(g("calibration_quantile", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    return scenario_from(load_kv(path), path.parent)


def parse_list(v: str, conv=_number) -> list:
    """Comma-separated values; ``a..b:step`` expands an inclusive range."""
    out = []
    for part in v.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            span, _, step = part.partition(":")
            lo, hi = span.split("..")
            lo, hi, step = conv(lo), conv(hi), conv(step or "1")
            if step <= 0:
                raise ConfigError(f"range step must be positive: {part!r}")
            x = lo
            while x <= hi:
                out.append(x)
                x += step
        else:
            out.append(conv(part))
    return out


SWEEP_KEYS = {"intervals", "frame_lengths", "delay_fracs", "load", "jobs"}


def sweep_from(kv: dict) -> dict:
    check_keys(kv, SWEEP_KEYS)
    return {
        "intervals": parse_list(kv.get("intervals", "30..100:10")),
        "frame_lengths": parse_list(kv.get("frame_lengths", "7,14,28"), int),
        "delay_fracs": parse_list(kv.get("delay_fracs", "1/2"), Fraction),
        "loads": parse_list(kv.get("load", "off"), _bool),
        "jobs": int(kv.get("jobs", 1)),
    }
